import hashlib
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from wavekin import cli
from wavekin.cli import (
    ConfigError,
    ExperimentConfig,
    estimate_cost,
    parse_config,
    run,
)


def ini(**sections) -> str:
    """Render {section: {key: value}} into INI text."""
    chunks = []
    for name, body in sections.items():
        chunks.append(f"[{name}]")
        for key, value in body.items():
            chunks.append(f"{key} = {value}")
        chunks.append("")
    return "\n".join(chunks)


TOY_CENSUS = ini(
    experiment={"tag": "census"},
    box={"d": 1, "L": 1, "beta": 1, "cutoff": 1, "gamma": 0.5},
    census={"k": 0},
)


def ensemble_text(out=None, M=60, base_seed=11, extra_evolve=None):
    evolve = {"dt": 0.05, "t_end": 0.2, "snapshot_times": "0 0.2"}
    if extra_evolve:
        evolve.update(extra_evolve)
    exp = {"tag": "ensemble"}
    if out is not None:
        exp["out"] = out
    return ini(
        experiment=exp,
        box={"d": 1, "L": 2, "beta": 1, "cutoff": 1, "gamma": 0.5},
        spectrum={"family": "gaussian_bump", "amplitude": 1.0, "width": 0.5},
        noise={"law": "gaussian"},
        evolve=evolve,
        ensemble={"M": M, "base_seed": base_seed},
    )


def compare_text(out=None, gamma="inf", L="2 4", M=150, tau=0.05, seed=7):
    exp = {"tag": "compare"}
    if out is not None:
        exp["out"] = out
    return ini(
        experiment=exp,
        box={"d": 1, "L": L, "beta": 1, "cutoff": 1, "gamma": gamma},
        spectrum={"family": "gaussian_bump", "amplitude": 1.0, "width": 0.5},
        noise={"law": "gaussian"},
        evolve={"dt": 0.02},
        ensemble={"M": M, "base_seed": seed},
        kinetic={"dtau": 0.01, "w": 0.5, "kernel": "box"},
        compare={"tau": tau},
    )


def write_and_run(tmp_path, text, experiment, name="cfg.ini", **kwargs):
    path = tmp_path / name
    path.write_text(text)
    err = io.StringIO()
    code = run(path, experiment=experiment, stderr=err, **kwargs)
    return code, err.getvalue()


def read_csv(path: Path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


class TestParsing:
    def test_toy_census_parses(self):
        ec = parse_config(TOY_CENSUS, experiment="census")
        assert ec.experiment == "census"
        assert len(ec.specs) == 1 and ec.specs[0].L == 1.0
        assert ec.k == (0,)

    def test_tag_mismatch(self):
        with pytest.raises(ConfigError, match="does not match"):
            parse_config(TOY_CENSUS, experiment="wke")

    def test_unknown_tag(self):
        bad = TOY_CENSUS.replace("tag = census", "tag = sweep")
        with pytest.raises(ConfigError, match="is not one of"):
            parse_config(bad)

    def test_missing_section_names_it(self):
        text = ensemble_text()
        chopped = text.split("[noise]")[0]
        with pytest.raises(ConfigError, match=r"\[noise\]"):
            parse_config(chopped)

    def test_missing_field_names_it(self):
        text = ensemble_text().replace("M = 60\n", "")
        with pytest.raises(ConfigError, match=r"\[ensemble\] M"):
            parse_config(text)

    def test_unknown_field_rejected(self):
        text = TOY_CENSUS.replace("k = 0", "k = 0\ntypo = 1")
        with pytest.raises(ConfigError, match=r"unknown field \[census\] typo"):
            parse_config(text)

    def test_duplicate_section_reports_line(self):
        with pytest.raises(ConfigError, match="line"):
            parse_config(TOY_CENSUS + "\n[census]\nk = 0\n")

    def test_syntax_error_reports_line(self):
        with pytest.raises(ConfigError, match="line"):
            parse_config("[experiment]\ntag = census\ngarbage without equals\n")

    def test_sqrt_beta_token(self):
        text = TOY_CENSUS.replace("beta = 1", "beta = sqrt2")
        ec = parse_config(text)
        assert ec.specs[0].beta == (math.sqrt(2.0),)

    def test_gamma_inf(self):
        text = TOY_CENSUS.replace("gamma = 0.5", "gamma = inf")
        assert parse_config(text).specs[0].epsilon == 0.0

    def test_ladder_rejected_for_single_box_experiment(self):
        text = ensemble_text().replace("L = 2", "L = 2 4")
        with pytest.raises(ConfigError, match="single box size"):
            parse_config(text)

    def test_ladder_must_increase(self):
        text = compare_text().replace("L = 2 4", "L = 4 2")
        with pytest.raises(ConfigError, match="strictly increasing"):
            parse_config(text)

    def test_compare_rejects_explicit_t_end(self):
        text = compare_text().replace("dt = 0.02", "dt = 0.02\nt_end = 3")
        with pytest.raises(ConfigError, match="t_end is derived"):
            parse_config(text)

    def test_compare_derives_end_times(self):
        ec = parse_config(compare_text(gamma=0.5, tau=0.05))
        # t_end = tau * L**(2 gamma) per rung
        assert ec.evolve_ladder[0].t_end == pytest.approx(0.05 * 2.0)
        assert ec.evolve_ladder[1].t_end == pytest.approx(0.05 * 4.0)

    def test_diagrams_needs_finite_kinetic_scale(self):
        text = ini(
            experiment={"tag": "diagrams"},
            box={"d": 1, "L": 2, "beta": 1, "cutoff": 1, "gamma": "inf"},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            diagrams={"tau": 0.5},
        )
        with pytest.raises(ConfigError, match="finite kinetic time"):
            parse_config(text)

    def test_chaos_modes_distinct(self):
        text = ini(
            experiment={"tag": "chaos"},
            box={"d": 1, "L": 2, "beta": 1, "cutoff": 1, "gamma": 0.5},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            noise={"law": "gaussian"},
            evolve={"dt": 0.1, "t_end": 0.1},
            ensemble={"M": 10, "base_seed": 1},
            chaos={"modes": "0; 0"},
        )
        with pytest.raises(ConfigError, match="distinct"):
            parse_config(text)

    def test_first_iterate_off_mesh_mode(self):
        text = ini(
            experiment={"tag": "first-iterate"},
            box={"d": 1, "L": 4, "beta": 1, "cutoff": 1, "gamma": 0.5},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            first_iterate={"t": 2.0, "modes": "1", "h": 0.4},
        )
        with pytest.raises(ConfigError, match="not a node"):
            parse_config(text)

    def test_mode_outside_ball(self):
        with pytest.raises(ConfigError, match="truncation ball"):
            parse_config(TOY_CENSUS.replace("k = 0", "k = 7"))

    def test_seed_override_needs_ensemble(self):
        with pytest.raises(ConfigError, match="--seed has no effect"):
            parse_config(TOY_CENSUS, seed=4)

    def test_seed_override_applies(self):
        assert parse_config(ensemble_text(), seed=123).base_seed == 123

    def test_bad_noise_law(self):
        text = ensemble_text().replace("law = gaussian", "law = levy")
        with pytest.raises(ConfigError, match="levy"):
            parse_config(text)

    def test_bad_bool(self):
        text = compare_text().replace("dtau = 0.01", "dtau = 0.01\nconserve = maybe")
        with pytest.raises(ConfigError, match=r"\[kinetic\] conserve"):
            parse_config(text)


class TestCost:
    def test_monotone_in_members(self):
        small = estimate_cost(parse_config(ensemble_text(M=50)))
        large = estimate_cost(parse_config(ensemble_text(M=500)))
        assert large == pytest.approx(10.0 * small)

    def test_compare_counts_both_solvers(self):
        ec = parse_config(compare_text(gamma=0.5))
        only_mc = sum(
            ec.M * cli._evolve_steps(c) * cli._evolve_entries(s, c) * cli._EVOLVE_FLOPS
            for s, c in zip(ec.specs, ec.evolve_ladder)
        )
        assert estimate_cost(ec) > only_mc


class TestRunCensus:
    def test_toy_count_five(self, tmp_path):
        out = tmp_path / "toy"
        code, err = write_and_run(
            tmp_path, TOY_CENSUS, "census", out=str(out)
        )
        assert code == 0, err
        header, rows = read_csv(out / "census_exact.csv")
        assert header == ["family", "d", "L", "count"]
        assert len(rows) == 1 and rows[0][3] == "5"

    def test_two_families_and_window(self, tmp_path):
        text = ini(
            experiment={"tag": "census"},
            box={"d": 1, "L": "2 4", "beta": 1, "cutoff": 1, "gamma": 0.5},
            census={"k": 0, "times": "1 4", "beta_alt": "sqrt2"},
        )
        out = tmp_path / "fam"
        code, err = write_and_run(tmp_path, text, "census", out=str(out))
        assert code == 0, err
        header, rows = read_csv(out / "census_exact.csv")
        assert [r[0] for r in rows] == ["1", "1", "1.414213562", "1.414213562"]
        assert [r[2] for r in rows] == ["2", "4", "2", "4"]
        wheader, wrows = read_csv(out / "census_window.csv")
        assert wheader[:5] == ["family", "d", "L", "t", "delta"]
        assert len(wrows) == 8  # 2 families x 2 sizes x 2 times
        for row in wrows:
            assert int(row[5]) >= 0 and int(row[6]) >= 0

    def test_missing_field_leaves_nothing(self, tmp_path):
        text = TOY_CENSUS.replace("k = 0", "")
        out = tmp_path / "never"
        code, err = write_and_run(tmp_path, text, "census", out=str(out))
        assert code == 2
        assert "missing required field [census] k" in err
        assert not out.exists()

    def test_budget_reports_estimate(self, tmp_path):
        text = TOY_CENSUS.replace(
            "[experiment]\ntag = census", "[experiment]\ntag = census\nbudget = 1"
        )
        out = tmp_path / "never"
        code, err = write_and_run(tmp_path, text, "census", out=str(out))
        assert code == 2
        assert "estimated cost" in err and "budget" in err
        assert not out.exists()

    def test_rerun_byte_identical(self, tmp_path):
        text = ini(
            experiment={"tag": "census"},
            box={"d": 1, "L": 2, "beta": 1, "cutoff": 1, "gamma": 0.5},
            census={"k": 0, "times": "1 2"},
        )
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code, _ = write_and_run(tmp_path, text, "census", out=str(out))
            assert code == 0
            outs.append(out)
        for fname in ("census_exact.csv", "census_window.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


class TestManifest:
    def test_lists_every_file_with_matching_checksums(self, tmp_path):
        out = tmp_path / "ens"
        code, err = write_and_run(
            tmp_path, ensemble_text(), "ensemble", out=str(out)
        )
        assert code == 0, err
        manifest = json.loads((out / "manifest.json").read_text())
        on_disk = {
            p.relative_to(out).as_posix()
            for p in out.rglob("*")
            if p.is_file() and p.name != "manifest.json"
        }
        assert set(manifest["files"]) == on_disk
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
        assert manifest["version"] == cli.VERSION
        assert manifest["experiment"] == "ensemble"
        assert manifest["wall_clock_seconds"] > 0
        assert "[ensemble]" in manifest["config_text"]
        assert manifest["config"]["M"] == 60

    def test_seed_flag_lands_in_manifest(self, tmp_path):
        out = tmp_path / "s"
        code, _ = write_and_run(
            tmp_path, ensemble_text(), "ensemble", out=str(out), seed=321
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["base_seed"] == 321
        record = json.loads((out / "ensemble_manifest.json").read_text())
        assert record["base_seed"] == 321


class TestRunEnsemble:
    def test_outputs_and_thread_invariance(self, tmp_path):
        out1 = tmp_path / "t1"
        out3 = tmp_path / "t3"
        code1, _ = write_and_run(tmp_path, ensemble_text(), "ensemble", out=str(out1))
        code3, _ = write_and_run(
            tmp_path, ensemble_text(), "ensemble", out=str(out3), threads=3
        )
        assert code1 == 0 and code3 == 0
        for i in range(2):
            a = (out1 / f"moments_{i}.csv").read_bytes()
            b = (out3 / f"moments_{i}.csv").read_bytes()
            assert a == b and len(a) > 0

    def test_seed_changes_bytes(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        write_and_run(tmp_path, ensemble_text(), "ensemble", out=str(out_a))
        write_and_run(
            tmp_path, ensemble_text(), "ensemble", out=str(out_b), seed=999
        )
        assert (out_a / "moments_1.csv").read_bytes() != (
            out_b / "moments_1.csv"
        ).read_bytes()

    def test_member_failure_exits_one(self, tmp_path):
        text = ini(
            experiment={"tag": "ensemble"},
            box={"d": 1, "L": 1, "beta": 1, "cutoff": 2, "gamma": 0.0},
            spectrum={"family": "gaussian_bump", "amplitude": 50.0, "width": 1.0},
            noise={"law": "gaussian"},
            evolve={"dt": 1.0, "t_end": 5.0, "scheme": "rk4_interaction_picture"},
            ensemble={"M": 4, "base_seed": 0},
        )
        out = tmp_path / "blow"
        with np.errstate(all="ignore"):
            code, err = write_and_run(tmp_path, text, "ensemble", out=str(out))
        assert code == 1
        assert "member" in err and "seed" in err


class TestRunCompare:
    def test_control_flags_pass(self, tmp_path):
        out = tmp_path / "ctl"
        code, err = write_and_run(
            tmp_path, compare_text(), "compare", out=str(out)
        )
        assert code == 0, err
        header, rows = read_csv(out / "summary.csv")
        flag_col = header.index("flag")
        sigma_col = header.index("max_sigma")
        assert len(rows) == 2
        for row in rows:
            assert row[flag_col] == "PASS"
            assert float(row[sigma_col]) <= 4.0
        # the epsilon = 0 kinetic prediction is the unmoved input spectrum
        cheader, crows = read_csv(out / "compare_L2.csv")
        wcol = cheader.index("wke_n")
        kcol = cheader.index("k_x")
        for row in crows:
            k = float(row[kcol])
            expected = math.exp(-(k * k) / 0.25)
            assert float(row[wcol]) == pytest.approx(expected, rel=1e-12)

    def test_interacting_ladder_outputs(self, tmp_path):
        out = tmp_path / "run"
        code, err = write_and_run(
            tmp_path,
            compare_text(gamma=0.5, M=80, tau=0.04),
            "compare",
            out=str(out),
        )
        assert code == 0, err
        assert (out / "compare_L2.csv").exists()
        assert (out / "compare_L4.csv").exists()
        header, rows = read_csv(out / "summary.csv")
        assert header[:4] == ["L", "epsilon", "n_modes", "sup_defect"]
        assert [r[0] for r in rows] == ["2", "4"]
        # interacting rungs carry defect diagnostics, not a control flag
        flag_col = header.index("flag")
        assert all(r[flag_col] == "" for r in rows)
        for row in rows:
            assert float(row[3]) >= 0.0


class TestRunOthers:
    def test_first_iterate_sum_matches_integral_on_matched_mesh(self, tmp_path):
        text = ini(
            experiment={"tag": "first-iterate"},
            box={"d": 1, "L": 4, "beta": 1, "cutoff": 1, "gamma": 0.5},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            first_iterate={"t": 4.0, "modes": "0; 1; 4"},
        )
        out = tmp_path / "fi"
        code, err = write_and_run(tmp_path, text, "first-iterate", out=str(out))
        assert code == 0, err
        header, rows = read_csv(out / "first_iterate.csv")
        assert header == ["m_x", "n_in", "lattice_sum", "integral", "collision"]
        assert len(rows) == 3
        # h = 1/L makes the quadrature nodes the lattice points exactly
        for row in rows:
            assert float(row[2]) == pytest.approx(float(row[3]), rel=1e-12, abs=1e-15)

    def test_wke_snapshots(self, tmp_path):
        text = ini(
            experiment={"tag": "wke"},
            box={"d": 1, "L": 4, "beta": 1, "cutoff": 1, "gamma": 0.5},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            kinetic={
                "h": 0.25,
                "tau_end": 0.2,
                "dtau": 0.02,
                "snapshot_taus": "0 0.1 0.2",
            },
        )
        out = tmp_path / "wke"
        code, err = write_and_run(tmp_path, text, "wke", out=str(out))
        assert code == 0, err
        header, rows = read_csv(out / "wke_trajectory.csv")
        assert header == ["tau", "k_1", "n"]
        taus = sorted({float(r[0]) for r in rows})
        assert taus == pytest.approx([0.0, 0.1, 0.2])
        assert all(float(r[2]) >= 0 for r in rows)

    def test_diagrams_outputs(self, tmp_path):
        text = ini(
            experiment={"tag": "diagrams"},
            box={"d": 1, "L": 2, "beta": 1, "cutoff": 1, "gamma": 0.5},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            diagrams={"tau": 0.5},
        )
        out = tmp_path / "diag"
        code, err = write_and_run(tmp_path, text, "diagrams", out=str(out))
        assert code == 0, err
        header, rows = read_csv(out / "truncated_moments.csv")
        assert header == ["m_x", "n_in", "moment", "correction"]
        by_mode = {int(r[0]): float(r[3]) for r in rows}
        for m in (1, 2):
            assert by_mode[m] == pytest.approx(by_mode[-m], rel=1e-10, abs=1e-14)
        couples_text = (out / "regular_couples.txt").read_text()
        assert couples_text.startswith("# couple 0 order 0\ncouple n_plus=0")
        mol_text = (out / "molecules.txt").read_text()
        assert "molecule atoms=0" in mol_text
        assert "kind=root_root" in mol_text
        # every entry header, one per regular couple of order <= 2
        assert mol_text.count("# molecule") == couples_text.count("# couple") == 15

    def test_chaos_rows(self, tmp_path):
        text = ini(
            experiment={"tag": "chaos"},
            box={"d": 1, "L": 2, "beta": 1, "cutoff": 1, "gamma": 0.5},
            spectrum={"family": "gaussian_bump", "amplitude": 1, "width": 0.5},
            noise={"law": "gaussian"},
            evolve={"dt": 0.05, "t_end": 0.1, "snapshot_times": "0 0.1"},
            ensemble={"M": 50, "base_seed": 2},
            chaos={"modes": "0; 1"},
        )
        out = tmp_path / "chaos"
        code, err = write_and_run(tmp_path, text, "chaos", out=str(out))
        assert code == 0, err
        header, rows = read_csv(out / "chaos.csv")
        assert header == ["snapshot", "t", "defect"]
        assert [r[0] for r in rows] == ["0", "1"]
        assert all(float(r[2]) >= 0 for r in rows)


class TestEntryPoints:
    def test_env_var_roots_relative_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.ENV_OUT_ROOT, str(tmp_path / "root"))
        text = TOY_CENSUS.replace("tag = census", "tag = census\nout = rel")
        path = tmp_path / "cfg.ini"
        path.write_text(text)
        assert run(path, experiment="census", stderr=io.StringIO()) == 0
        assert (tmp_path / "root" / "rel" / "census_exact.csv").exists()

    def test_out_flag_beats_config(self, tmp_path):
        text = TOY_CENSUS.replace(
            "tag = census", f"tag = census\nout = {tmp_path / 'config_out'}"
        )
        out = tmp_path / "flag_out"
        code, _ = write_and_run(tmp_path, text, "census", out=str(out))
        assert code == 0
        assert out.exists() and not (tmp_path / "config_out").exists()

    def test_no_out_anywhere(self, tmp_path):
        code, err = write_and_run(tmp_path, TOY_CENSUS, "census")
        assert code == 2
        assert "out" in err

    def test_missing_config_file(self, tmp_path):
        err = io.StringIO()
        assert run(tmp_path / "absent.ini", experiment="census", stderr=err) == 2

    def test_main_round_trip(self, tmp_path, capsys):
        path = tmp_path / "toy.ini"
        path.write_text(TOY_CENSUS)
        out = tmp_path / "main_out"
        assert cli.main(["census", "--config", str(path), "--out", str(out)]) == 0
        assert (out / "manifest.json").exists()

    def test_main_rejects_unknown_experiment(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["sweep", "--config", "x.ini"])

    def test_console_script_wiring(self, tmp_path):
        path = tmp_path / "toy.ini"
        path.write_text(TOY_CENSUS)
        out = tmp_path / "sub_out"
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "wavekin.cli",
                "census",
                "--config",
                str(path),
                "--out",
                str(out),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "census_exact.csv").exists()
