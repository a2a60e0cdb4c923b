"""Experiment harness: INI configs in, CSV tables and a JSON manifest out.

Seven experiment tags exercise the library end to end:

  census          exact and windowed resonance counts over a box ladder
  first-iterate   lattice sum vs continuum integral vs collision rate
  wke             kinetic trajectory on the continuum quadrature mesh
  ensemble        Monte Carlo moment tables over seeded members
  compare         ensemble spectra against the kinetic prediction
  diagrams        truncated expansion moments plus graph exports
  chaos           factorization defect of joint moments along the flow

Configs are flat INI files; every field is validated before a single
output byte is written, so a bad config can never leave partial
results behind.  CSV cells are %.17g floats or plain integers with no
wall clock inside, which makes reruns of one config and seed
byte-identical; the JSON manifest written last carries the only
timing, plus a checksum for every file in the output directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diagrams import (
    DEFAULT_DELTA,
    build_molecule,
    couple_to_text,
    molecule_to_text,
    regular_couples,
    truncated_moment,
)
from .ensemble import (
    chaos_defect,
    collect_fields,
    ensemble_manifest,
    moment_table_to_csv,
    run_ensemble,
)
from .evolver import EvolveConfig, _snapshot_steps
from .fields import GAUSSIAN, UNIFORM_PHASE, NoiseLaw, SpectrumFamily, spectrum_eval
from .kinetic import (
    DeltaBroadening,
    KineticGrid,
    collision,
    first_iterate_integral,
    first_iterate_sum,
    solve_wke,
    write_trajectory_csv,
)
from .lattice import BoxSpec, build_lattice
from .resonance_census import count_exact, crossover_scan

VERSION = "0.1.0"

EXPERIMENTS = (
    "census",
    "first-iterate",
    "wke",
    "ensemble",
    "compare",
    "diagrams",
    "chaos",
)

# default root for relative output paths when --out / [experiment] out
# gives a relative path
ENV_OUT_ROOT = "WAVEKIN_OUT"

# coarse work-unit ceiling (roughly flops); configs above it must raise
# [experiment] budget explicitly
DEFAULT_BUDGET = 1.0e12

_F = "{:.17g}".format


class ConfigError(Exception):
    """Any parse or validation failure; the message names the field."""


# ---------------------------------------------------------------------------
# field parsing

_REQUIRED = object()


def _as_str(raw: str) -> str:
    v = raw.strip()
    if not v:
        raise ValueError("empty value")
    return v


def _as_int(raw: str) -> int:
    return int(raw.strip())


def _as_float(raw: str) -> float:
    v = float(raw.strip())
    if math.isnan(v):
        raise ValueError("nan is not a value")
    return v


def _as_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _as_floats(raw: str) -> Tuple[float, ...]:
    parts = raw.split()
    if not parts:
        raise ValueError("empty list")
    return tuple(_as_float(p) for p in parts)


def _as_ints(raw: str) -> Tuple[int, ...]:
    parts = raw.split()
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


def _beta_component(token: str) -> float:
    # sqrtN tokens give the intended irrational without decimal rounding
    if token.startswith("sqrt"):
        arg = int(token[4:])
        if arg <= 0:
            raise ValueError(f"sqrt argument must be positive, got {token!r}")
        return math.sqrt(arg)
    return _as_float(token)


def _as_beta(raw: str) -> Tuple[float, ...]:
    parts = raw.split()
    if not parts:
        raise ValueError("empty list")
    return tuple(_beta_component(p) for p in parts)


def _as_modes(raw: str) -> Tuple[Tuple[int, ...], ...]:
    """Semicolon-separated integer vectors: '1 0; 0 1'."""
    groups = [g for g in raw.split(";") if g.strip()]
    if not groups:
        raise ValueError("empty mode list")
    return tuple(tuple(int(p) for p in g.split()) for g in groups)


class _Cfg:
    """Typed, consumption-tracked access to one parsed INI file."""

    def __init__(self, cp: configparser.ConfigParser):
        self._cp = cp
        self._used: set = set()

    def require_section(self, section: str, experiment: str) -> None:
        if not self._cp.has_section(section):
            raise ConfigError(
                f"missing required section [{section}] for experiment "
                f"'{experiment}'"
            )

    def get(self, section: str, key: str, cast, default=_REQUIRED):
        if not self._cp.has_option(section, key):
            if default is _REQUIRED:
                raise ConfigError(f"missing required field [{section}] {key}")
            return default
        self._used.add((section, key))
        raw = self._cp.get(section, key)
        try:
            return cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {exc}") from None

    def finish(self) -> None:
        # an unconsumed key is a typo, not a silent no-op
        for section in self._cp.sections():
            for key in self._cp.options(section):
                if (section, key) not in self._used:
                    raise ConfigError(f"unknown field [{section}] {key}")


# ---------------------------------------------------------------------------
# config record


@dataclass
class ExperimentConfig:
    """Parsed and fully validated description of one run.

    specs is the box ladder (a single entry except for census and
    compare); evolve_ladder holds the per-rung evolution settings that
    compare derives from tau and each rung's kinetic time scale.
    """

    experiment: str
    out: Optional[str]
    budget: float
    specs: Tuple[BoxSpec, ...]
    spectrum: Optional[SpectrumFamily] = None
    noise: Optional[NoiseLaw] = None
    evolve: Optional[EvolveConfig] = None
    evolve_ladder: Optional[Tuple[EvolveConfig, ...]] = None
    M: Optional[int] = None
    base_seed: Optional[int] = None
    h: Optional[float] = None
    w: Optional[float] = None
    kernel: str = "gaussian"
    conserve: bool = True
    tau_end: Optional[float] = None
    dtau: Optional[float] = None
    snapshot_taus: Optional[Tuple[float, ...]] = None
    k: Optional[Tuple[int, ...]] = None
    modes: Optional[Tuple[Tuple[int, ...], ...]] = None
    times: Optional[Tuple[float, ...]] = None
    alt_specs: Tuple[BoxSpec, ...] = ()
    t: Optional[float] = None
    tau: Optional[float] = None
    order: int = 2
    delta: float = DEFAULT_DELTA


def _parse_box(cfg: _Cfg, experiment: str, ladder_ok: bool) -> Tuple[BoxSpec, ...]:
    cfg.require_section("box", experiment)
    d = cfg.get("box", "d", _as_int)
    sizes = cfg.get("box", "L", _as_floats)
    beta = cfg.get("box", "beta", _as_beta)
    cutoff = cfg.get("box", "cutoff", _as_float)
    gamma = cfg.get("box", "gamma", _as_float)
    if len(sizes) > 1 and not ladder_ok:
        raise ConfigError(
            f"[box] L: experiment '{experiment}' takes a single box size, "
            f"got {len(sizes)} values"
        )
    if len(sizes) > 1 and any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("[box] L: ladder values must be strictly increasing")
    specs = []
    for L in sizes:
        try:
            specs.append(BoxSpec(d, L, beta, cutoff, gamma))
        except ValueError as exc:
            raise ConfigError(f"[box] invalid at L={L:g}: {exc}") from None
    return tuple(specs)


def _parse_spectrum(cfg: _Cfg, experiment: str) -> SpectrumFamily:
    cfg.require_section("spectrum", experiment)
    family = cfg.get("spectrum", "family", _as_str)
    try:
        if family in ("gaussian_bump", "plateau"):
            amplitude = cfg.get("spectrum", "amplitude", _as_float)
            width = cfg.get("spectrum", "width", _as_float)
            center = cfg.get("spectrum", "center", _as_floats, default=())
            ctor = getattr(SpectrumFamily, family)
            return ctor(amplitude, width, center)
        if family == "custom_table":
            radii = cfg.get("spectrum", "radii", _as_floats)
            values = cfg.get("spectrum", "values", _as_floats)
            return SpectrumFamily.custom_table(radii, values)
    except ValueError as exc:
        raise ConfigError(f"[spectrum] invalid: {exc}") from None
    raise ConfigError(
        f"bad value for [spectrum] family: {family!r} is not one of "
        "gaussian_bump, plateau, custom_table"
    )


def _parse_noise(cfg: _Cfg, experiment: str) -> NoiseLaw:
    cfg.require_section("noise", experiment)
    law = cfg.get("noise", "law", _as_str)
    if law == "gaussian":
        return GAUSSIAN
    if law == "uniform_phase":
        return UNIFORM_PHASE
    raise ConfigError(
        f"bad value for [noise] law: {law!r} is not one of "
        "gaussian, uniform_phase"
    )


def _parse_evolve(cfg: _Cfg, experiment: str, need_t_end: bool) -> EvolveConfig:
    cfg.require_section("evolve", experiment)
    dt = cfg.get("evolve", "dt", _as_float)
    scheme = cfg.get("evolve", "scheme", _as_str, default="strang_split")
    dealias = cfg.get("evolve", "dealias_factor", _as_float, default=2.0)
    if need_t_end:
        t_end = cfg.get("evolve", "t_end", _as_float)
        snaps = cfg.get("evolve", "snapshot_times", _as_floats, default=None)
        try:
            return EvolveConfig(dt, t_end, scheme, dealias, snaps)
        except ValueError as exc:
            raise ConfigError(f"[evolve] invalid: {exc}") from None
    # compare derives t_end per rung; reject a stray explicit one
    if cfg._cp.has_option("evolve", "t_end"):
        raise ConfigError(
            "[evolve] t_end is derived from [compare] tau per box size; "
            "remove it"
        )
    if cfg._cp.has_option("evolve", "snapshot_times"):
        raise ConfigError(
            "[evolve] snapshot_times: compare measures at the end time only; "
            "remove it"
        )
    try:
        return EvolveConfig(dt, dt, scheme, dealias, None)
    except ValueError as exc:
        raise ConfigError(f"[evolve] invalid: {exc}") from None


def _parse_ensemble(cfg: _Cfg, experiment: str) -> Tuple[int, int]:
    cfg.require_section("ensemble", experiment)
    members = cfg.get("ensemble", "M", _as_int)
    if members < 2:
        raise ConfigError(f"bad value for [ensemble] M: need >= 2, got {members}")
    base_seed = cfg.get("ensemble", "base_seed", _as_int)
    if base_seed < 0:
        raise ConfigError(
            f"bad value for [ensemble] base_seed: need >= 0, got {base_seed}"
        )
    return members, base_seed


def _check_mode(spec: BoxSpec, m: Tuple[int, ...], where: str) -> None:
    if len(m) != spec.d:
        raise ConfigError(f"{where}: mode {m} needs {spec.d} components")
    if sum(c * c for c in m) > spec.radius2 * (1.0 + 1e-12):
        raise ConfigError(
            f"{where}: mode {m} lies outside the truncation ball "
            f"(|m| <= {spec.cutoff:g}*{spec.L:g})"
        )


def parse_config(
    text: str,
    experiment: Optional[str] = None,
    seed: Optional[int] = None,
) -> ExperimentConfig:
    """Validate one INI config completely; no output may exist yet.

    experiment, when given, must match the config's own tag; seed
    overrides [ensemble] base_seed.  Raises ConfigError naming the
    offending section and field (or carrying the parser's line report).
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case: M and L are spelled upper-case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = _Cfg(cp)

    cfg.require_section("experiment", experiment or "<unknown>")
    tag = cfg.get("experiment", "tag", _as_str)
    if tag not in EXPERIMENTS:
        raise ConfigError(
            f"bad value for [experiment] tag: {tag!r} is not one of "
            + ", ".join(EXPERIMENTS)
        )
    if experiment is not None and tag != experiment:
        raise ConfigError(
            f"config tag '{tag}' does not match requested experiment "
            f"'{experiment}'"
        )
    out = cfg.get("experiment", "out", _as_str, default=None)
    budget = cfg.get("experiment", "budget", _as_float, default=DEFAULT_BUDGET)
    if not budget > 0:
        raise ConfigError(f"bad value for [experiment] budget: {budget}")

    ladder_ok = tag in ("census", "compare")
    specs = _parse_box(cfg, tag, ladder_ok)
    ec = ExperimentConfig(experiment=tag, out=out, budget=budget, specs=specs)

    if tag == "census":
        cfg.require_section("census", tag)
        ec.k = cfg.get("census", "k", _as_ints)
        for spec in specs:
            _check_mode(spec, ec.k, "[census] k")
        ec.times = cfg.get("census", "times", _as_floats, default=None)
        if ec.times is not None and any(t <= 0 for t in ec.times):
            raise ConfigError("bad value for [census] times: all must be > 0")
        beta_alt = cfg.get("census", "beta_alt", _as_beta, default=None)
        if beta_alt is not None:
            alt = []
            for spec in specs:
                try:
                    alt.append(
                        BoxSpec(spec.d, spec.L, beta_alt, spec.cutoff, spec.gamma)
                    )
                except ValueError as exc:
                    raise ConfigError(f"[census] beta_alt invalid: {exc}") from None
            ec.alt_specs = tuple(alt)

    elif tag == "first-iterate":
        spec = specs[0]
        ec.spectrum = _parse_spectrum(cfg, tag)
        cfg.require_section("first_iterate", tag)
        ec.t = cfg.get("first_iterate", "t", _as_float)
        if not ec.t > 0:
            raise ConfigError(f"bad value for [first_iterate] t: need > 0, got {ec.t}")
        ec.modes = cfg.get("first_iterate", "modes", _as_modes)
        for m in ec.modes:
            _check_mode(spec, m, "[first_iterate] modes")
        ec.h = cfg.get("first_iterate", "h", _as_float, default=1.0 / spec.L)
        ec.w = cfg.get("first_iterate", "w", _as_float, default=1.0 / ec.t)
        ec.kernel = cfg.get("first_iterate", "kernel", _as_str, default="box")
        grid = _make_grid(spec, ec.h)
        _make_broadening(grid, ec.w, ec.kernel)
        idx = grid.index_of(np.asarray(ec.modes, dtype=float) / spec.L)
        if np.any(idx < 0):
            bad = ec.modes[int(np.argmin(idx))]
            raise ConfigError(
                f"[first_iterate] modes: {bad} / L is not a node of the "
                f"h={ec.h:g} mesh"
            )

    elif tag == "wke":
        spec = specs[0]
        ec.spectrum = _parse_spectrum(cfg, tag)
        cfg.require_section("kinetic", tag)
        ec.h = cfg.get("kinetic", "h", _as_float)
        ec.tau_end = cfg.get("kinetic", "tau_end", _as_float)
        ec.dtau = cfg.get("kinetic", "dtau", _as_float)
        ec.w = cfg.get("kinetic", "w", _as_float, default=None)
        ec.kernel = cfg.get("kinetic", "kernel", _as_str, default="gaussian")
        ec.conserve = cfg.get("kinetic", "conserve", _as_bool, default=True)
        ec.snapshot_taus = cfg.get("kinetic", "snapshot_taus", _as_floats, default=None)
        grid = _make_grid(spec, ec.h)
        _make_broadening(grid, ec.w, ec.kernel)
        if not (ec.dtau > 0 and ec.tau_end >= ec.dtau):
            raise ConfigError(
                f"[kinetic] needs 0 < dtau <= tau_end, got dtau={ec.dtau} "
                f"tau_end={ec.tau_end}"
            )
        if ec.snapshot_taus is not None:
            for s in ec.snapshot_taus:
                if not 0.0 <= s <= ec.tau_end * (1.0 + 1e-12):
                    raise ConfigError(
                        f"bad value for [kinetic] snapshot_taus: {s:g} outside "
                        f"[0, {ec.tau_end:g}]"
                    )

    elif tag == "ensemble":
        ec.spectrum = _parse_spectrum(cfg, tag)
        ec.noise = _parse_noise(cfg, tag)
        ec.evolve = _parse_evolve(cfg, tag, need_t_end=True)
        ec.M, ec.base_seed = _parse_ensemble(cfg, tag)

    elif tag == "compare":
        ec.spectrum = _parse_spectrum(cfg, tag)
        ec.noise = _parse_noise(cfg, tag)
        ec.M, ec.base_seed = _parse_ensemble(cfg, tag)
        cfg.require_section("compare", tag)
        ec.tau = cfg.get("compare", "tau", _as_float)
        if not ec.tau > 0:
            raise ConfigError(f"bad value for [compare] tau: need > 0, got {ec.tau}")
        cfg.require_section("kinetic", tag)
        ec.dtau = cfg.get("kinetic", "dtau", _as_float)
        ec.w = cfg.get("kinetic", "w", _as_float, default=None)
        ec.kernel = cfg.get("kinetic", "kernel", _as_str, default="gaussian")
        ec.conserve = cfg.get("kinetic", "conserve", _as_bool, default=True)
        if any(s.epsilon > 0 for s in specs) and not (
            0 < ec.dtau <= ec.tau * (1.0 + 1e-12)
        ):
            raise ConfigError(
                f"[kinetic] needs 0 < dtau <= tau, got dtau={ec.dtau} "
                f"tau={ec.tau}"
            )
        base = _parse_evolve(cfg, tag, need_t_end=False)
        ladder = []
        for spec in specs:
            # the mesh at spacing 1/L contains every lattice mode k = m/L
            grid = _make_grid(spec, 1.0 / spec.L)
            _make_broadening(grid, ec.w, ec.kernel)
            if spec.epsilon > 0:
                t_end = ec.tau * spec.t_kin
                if base.dt > t_end:
                    raise ConfigError(
                        f"[evolve] dt={base.dt:g} exceeds the rung end time "
                        f"tau*T_kin={t_end:g} at L={spec.L:g}"
                    )
                ladder.append(
                    EvolveConfig(
                        base.dt, t_end, base.scheme, base.dealias_factor, None
                    )
                )
            else:
                # free flow: the spectrum is time-invariant, one step is enough
                ladder.append(base)
        ec.evolve = base
        ec.evolve_ladder = tuple(ladder)

    elif tag == "diagrams":
        spec = specs[0]
        ec.spectrum = _parse_spectrum(cfg, tag)
        cfg.require_section("diagrams", tag)
        ec.tau = cfg.get("diagrams", "tau", _as_float)
        if not 0.0 <= ec.tau <= 1.0:
            raise ConfigError(
                f"bad value for [diagrams] tau: need 0 <= tau <= 1, got {ec.tau}"
            )
        ec.order = cfg.get("diagrams", "order", _as_int, default=2)
        if not 0 <= ec.order <= 2:
            raise ConfigError(
                f"bad value for [diagrams] order: lattice sums cap at 2, "
                f"got {ec.order}"
            )
        ec.delta = cfg.get("diagrams", "delta", _as_float, default=DEFAULT_DELTA)
        if not 0 < ec.delta <= 1:
            raise ConfigError(
                f"bad value for [diagrams] delta: need 0 < delta <= 1, "
                f"got {ec.delta}"
            )
        if not math.isfinite(spec.t_kin):
            raise ConfigError(
                "[box] gamma: diagrams needs a finite kinetic time scale"
            )

    elif tag == "chaos":
        spec = specs[0]
        ec.spectrum = _parse_spectrum(cfg, tag)
        ec.noise = _parse_noise(cfg, tag)
        ec.evolve = _parse_evolve(cfg, tag, need_t_end=True)
        ec.M, ec.base_seed = _parse_ensemble(cfg, tag)
        cfg.require_section("chaos", tag)
        ec.modes = cfg.get("chaos", "modes", _as_modes)
        if len(ec.modes) < 2:
            raise ConfigError("bad value for [chaos] modes: need at least two")
        if len(set(ec.modes)) != len(ec.modes):
            raise ConfigError("bad value for [chaos] modes: must be distinct")
        for m in ec.modes:
            _check_mode(spec, m, "[chaos] modes")

    cfg.finish()
    if seed is not None:
        if ec.base_seed is None:
            raise ConfigError(
                f"--seed has no effect on experiment '{tag}' (no ensemble)"
            )
        if seed < 0:
            raise ConfigError(f"bad value for --seed: need >= 0, got {seed}")
        ec.base_seed = seed
    return ec


def _make_grid(spec: BoxSpec, h: float) -> KineticGrid:
    try:
        return KineticGrid(spec.d, spec.cutoff, h, spec.beta)
    except ValueError as exc:
        raise ConfigError(f"kinetic mesh invalid: {exc}") from None


def _make_broadening(
    grid: KineticGrid, w: Optional[float], kernel: str
) -> DeltaBroadening:
    try:
        if w is None:
            return DeltaBroadening.for_grid(grid, kernel=kernel)
        return DeltaBroadening(w, kernel)
    except ValueError as exc:
        raise ConfigError(f"broadening invalid: {exc}") from None


# ---------------------------------------------------------------------------
# cost estimates

# per-entry constants are rough flop counts; the gate is a sanity net,
# not an accountant
_EVOLVE_FLOPS = 50.0
_PAIR_FLOPS = 10.0


def _evolve_entries(spec: BoxSpec, cfg: EvolveConfig) -> float:
    m_max = math.floor(spec.cutoff * spec.L)
    side = math.ceil(cfg.dealias_factor * (2 * m_max + 1))
    return float(side**spec.d)


def _evolve_steps(cfg: EvolveConfig) -> int:
    return max(int(math.ceil(cfg.t_end / cfg.dt - 1e-9)), 1)


def _mesh_nodes(spec: BoxSpec, h: float) -> float:
    return float((2 * math.floor(spec.cutoff / h) + 1) ** spec.d)


def _lattice_modes(spec: BoxSpec) -> float:
    return float((2 * math.floor(spec.cutoff * spec.L) + 1) ** spec.d)


def estimate_cost(ec: ExperimentConfig) -> float:
    """Coarse work units for the run; compared against [experiment] budget."""
    tag = ec.experiment
    if tag == "census":
        n_t = len(ec.times) if ec.times else 0
        return sum(
            _lattice_modes(s) ** 2 * (1 + n_t) * _PAIR_FLOPS
            for s in list(ec.specs) + list(ec.alt_specs)
        )
    if tag == "first-iterate":
        spec = ec.specs[0]
        mesh = _mesh_nodes(spec, ec.h)
        per_mode = _lattice_modes(spec) ** 2 * 3 + mesh**2 * 2
        return len(ec.modes) * per_mode * _PAIR_FLOPS
    if tag == "wke":
        spec = ec.specs[0]
        steps = max(int(round(ec.tau_end / ec.dtau)), 1)
        return 4.0 * steps * _mesh_nodes(spec, ec.h) ** 2 * _PAIR_FLOPS
    if tag == "ensemble":
        spec = ec.specs[0]
        return (
            ec.M
            * _evolve_steps(ec.evolve)
            * _evolve_entries(spec, ec.evolve)
            * _EVOLVE_FLOPS
        )
    if tag == "compare":
        total = 0.0
        for spec, ecfg in zip(ec.specs, ec.evolve_ladder):
            total += ec.M * _evolve_steps(ecfg) * _evolve_entries(spec, ecfg) * _EVOLVE_FLOPS
            if spec.epsilon > 0:
                steps = max(int(round(ec.tau / ec.dtau)), 1)
                total += 4.0 * steps * _mesh_nodes(spec, 1.0 / spec.L) ** 2 * _PAIR_FLOPS
        return total
    if tag == "diagrams":
        spec = ec.specs[0]
        n = _lattice_modes(spec)
        # order-2 couples dominate: ~n^2 decorations each, 42 couples
        per_mode = n * n * 42.0 if ec.order >= 2 else n
        return n * per_mode * _PAIR_FLOPS
    if tag == "chaos":
        spec = ec.specs[0]
        n_snap = len(ec.evolve.snapshot_times)
        return (
            n_snap
            * ec.M
            * _evolve_steps(ec.evolve)
            * _evolve_entries(spec, ec.evolve)
            * _EVOLVE_FLOPS
        )
    raise ValueError(f"unknown experiment {tag!r}")


def _check_budget(ec: ExperimentConfig) -> None:
    est = estimate_cost(ec)
    if est > ec.budget:
        raise ConfigError(
            f"estimated cost {est:.3g} work units exceeds the budget "
            f"{ec.budget:.3g}; raise [experiment] budget to proceed"
        )


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    """Provenance record: everything needed to audit one artifact dir."""

    experiment: str
    version: str
    wall_clock_seconds: float
    config_text: str
    config: dict
    files: Dict[str, str] = field(default_factory=dict)


def _jsonify(value):
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return _jsonify(float(value))
    return value


def _config_dict(ec: ExperimentConfig) -> dict:
    body: dict = {
        "experiment": ec.experiment,
        "budget": ec.budget,
        "boxes": [
            {
                "d": s.d,
                "L": s.L,
                "beta": list(s.beta),
                "cutoff": s.cutoff,
                "gamma": s.gamma,
            }
            for s in ec.specs
        ],
    }
    if ec.alt_specs:
        body["alt_beta"] = list(ec.alt_specs[0].beta)
    if ec.spectrum is not None:
        body["spectrum"] = dict(vars(ec.spectrum))
    if ec.noise is not None:
        body["noise_law"] = ec.noise.tag
    if ec.evolve is not None:
        body["evolve"] = {
            "dt": ec.evolve.dt,
            "t_end": ec.evolve.t_end,
            "scheme": ec.evolve.scheme,
            "dealias_factor": ec.evolve.dealias_factor,
            "snapshot_times": list(ec.evolve.snapshot_times),
        }
    for name in (
        "M",
        "base_seed",
        "h",
        "w",
        "tau_end",
        "dtau",
        "k",
        "modes",
        "times",
        "t",
        "tau",
    ):
        val = getattr(ec, name)
        if val is not None:
            body[name] = val
    if ec.experiment in ("wke", "compare", "first-iterate"):
        body["kernel"] = ec.kernel
        body["conserve"] = ec.conserve
    if ec.experiment == "diagrams":
        body["order"] = ec.order
        body["delta"] = ec.delta
    return _jsonify(body)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    """Checksum every file in the directory and write manifest.json last."""
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            manifest.files[p.relative_to(out_dir).as_posix()] = _sha256(p)
    body = {
        "experiment": manifest.experiment,
        "version": manifest.version,
        "wall_clock_seconds": manifest.wall_clock_seconds,
        "config_text": manifest.config_text,
        "config": manifest.config,
        "files": manifest.files,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# experiment runners


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _axis_suffixes(d: int) -> List[str]:
    return ["xyz"[j] if j < 3 else str(j) for j in range(d)]


def _run_census(ec: ExperimentConfig, out_dir: Path) -> None:
    families = [list(ec.specs)]
    if ec.alt_specs:
        families.append(list(ec.alt_specs))
    rows = []
    for specs in families:
        for spec in specs:
            rows.append(
                [spec.beta_label, str(spec.d), _F(spec.L), str(count_exact(spec, ec.k))]
            )
    _write_csv(out_dir / "census_exact.csv", ["family", "d", "L", "count"], rows)
    if ec.times:
        wrows = []
        for specs in families:
            for r in crossover_scan(specs, ec.k, ec.times):
                wrows.append(
                    [
                        r.beta_label,
                        str(r.d),
                        _F(r.L),
                        _F(r.t),
                        _F(r.delta),
                        str(r.quasi_count),
                        str(r.exact_count),
                        _F(r.volume_prediction),
                    ]
                )
        _write_csv(
            out_dir / "census_window.csv",
            [
                "family",
                "d",
                "L",
                "t",
                "delta",
                "quasi_count",
                "exact_count",
                "volume_prediction",
            ],
            wrows,
        )


def _run_first_iterate(ec: ExperimentConfig, out_dir: Path) -> None:
    spec = ec.specs[0]
    grid = _make_grid(spec, ec.h)
    b = _make_broadening(grid, ec.w, ec.kernel)
    vals = np.asarray(spectrum_eval(ec.spectrum, grid.nodes), dtype=float)
    pts = np.asarray(ec.modes, dtype=float) / spec.L
    idx = grid.index_of(pts)
    rates = collision(grid, vals, b, conserve=False, rows=idx)
    eps = spec.epsilon
    rows = []
    for mode, rate in zip(ec.modes, rates):
        m = np.asarray(mode, dtype=np.int64)
        n_in = float(spectrum_eval(ec.spectrum, m / spec.L))
        lattice = first_iterate_sum(spec, ec.spectrum, ec.t, m)
        integral = first_iterate_integral(
            grid, ec.spectrum, ec.t, m / spec.L, epsilon=eps
        )
        rows.append(
            [str(c) for c in mode]
            + [_F(n_in), _F(lattice), _F(integral), _F(eps * eps * ec.t * float(rate))]
        )
    header = [f"m_{a}" for a in _axis_suffixes(spec.d)] + [
        "n_in",
        "lattice_sum",
        "integral",
        "collision",
    ]
    _write_csv(out_dir / "first_iterate.csv", header, rows)


def _run_wke(ec: ExperimentConfig, out_dir: Path) -> None:
    spec = ec.specs[0]
    grid = _make_grid(spec, ec.h)
    b = _make_broadening(grid, ec.w, ec.kernel)
    traj = solve_wke(
        grid,
        ec.spectrum,
        ec.tau_end,
        ec.dtau,
        b,
        snapshot_taus=ec.snapshot_taus,
        conserve=ec.conserve,
    )
    write_trajectory_csv(traj, out_dir / "wke_trajectory.csv")


def _run_ensemble(ec: ExperimentConfig, out_dir: Path, threads: int) -> None:
    spec = ec.specs[0]
    tables = run_ensemble(
        spec, ec.spectrum, ec.noise, ec.evolve, ec.M, ec.base_seed, threads=threads
    )
    for i, table in enumerate(tables):
        (out_dir / f"moments_{i}.csv").write_text(moment_table_to_csv(table))
    record = ensemble_manifest(spec, ec.spectrum, ec.noise, ec.evolve, ec.M, ec.base_seed)
    (out_dir / "ensemble_manifest.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n"
    )


def _run_compare(ec: ExperimentConfig, out_dir: Path, threads: int) -> None:
    summary = []
    for spec, ecfg in zip(ec.specs, ec.evolve_ladder):
        tables = run_ensemble(
            spec, ec.spectrum, ec.noise, ecfg, ec.M, ec.base_seed, threads=threads
        )
        table = tables[-1]
        ms = build_lattice(spec)
        grid = _make_grid(spec, 1.0 / spec.L)
        idx = grid.index_of(ms.modes / spec.L)
        if np.any(idx < 0):
            raise RuntimeError("lattice mode missing from the kinetic mesh")
        if spec.epsilon > 0:
            b = _make_broadening(grid, ec.w, ec.kernel)
            traj = solve_wke(
                grid,
                ec.spectrum,
                ec.tau,
                ec.dtau,
                b,
                snapshot_taus=(ec.tau,),
                conserve=ec.conserve,
            )
            n_tau = traj.states[-1].values[idx]
        else:
            # epsilon = 0: kinetic time stands still, the prediction is n_in
            n_tau = np.asarray(spectrum_eval(ec.spectrum, grid.nodes), dtype=float)[idx]
        defect = np.abs(table.mean - n_tau)
        axes = _axis_suffixes(spec.d)
        rows = []
        for j, m in enumerate(ms.modes):
            rows.append(
                [str(c) for c in m]
                + [_F(c / spec.L) for c in m]
                + [
                    _F(table.mean[j]),
                    _F(table.stderr[j]),
                    _F(n_tau[j]),
                    _F(defect[j]),
                ]
            )
        header = (
            [f"m_{a}" for a in axes]
            + [f"k_{a}" for a in axes]
            + ["mc_mean", "mc_stderr", "wke_n", "defect"]
        )
        _write_csv(out_dir / f"compare_L{spec.L:g}.csv", header, rows)
        sup = float(defect.max(initial=0.0))
        peak = float(n_tau.max(initial=0.0))
        rel = sup / peak if peak > 0 else math.inf
        measurable = table.stderr > 0
        max_sigma = float((defect[measurable] / table.stderr[measurable]).max(initial=0.0))
        if np.any(~measurable & (defect > 1e-12)):
            # a deterministic mode that still misses can never pass a
            # sigma test
            max_sigma = math.inf
        if spec.epsilon > 0:
            flag = ""
        else:
            flag = "PASS" if max_sigma <= 4.0 else "FAIL"
        summary.append(
            [
                _F(spec.L),
                _F(spec.epsilon),
                str(len(ms)),
                _F(sup),
                _F(peak),
                _F(rel),
                _F(max_sigma),
                flag,
            ]
        )
    _write_csv(
        out_dir / "summary.csv",
        [
            "L",
            "epsilon",
            "n_modes",
            "sup_defect",
            "wke_peak",
            "rel_defect",
            "max_sigma",
            "flag",
        ],
        summary,
    )


def _run_diagrams(ec: ExperimentConfig, out_dir: Path) -> None:
    spec = ec.specs[0]
    ms = build_lattice(spec)
    values = truncated_moment(spec, ec.spectrum, ec.tau, ec.order, delta=ec.delta)
    n_in = np.asarray(spectrum_eval(ec.spectrum, ms.modes / spec.L), dtype=float)
    rows = []
    for j, m in enumerate(ms.modes):
        rows.append(
            [str(c) for c in m]
            + [_F(n_in[j]), _F(values[j]), _F(values[j] - n_in[j])]
        )
    header = [f"m_{a}" for a in _axis_suffixes(spec.d)] + [
        "n_in",
        "moment",
        "correction",
    ]
    _write_csv(out_dir / "truncated_moments.csv", header, rows)

    couples = regular_couples(ec.order)
    with open(out_dir / "regular_couples.txt", "w") as fh:
        for i, c in enumerate(couples):
            order = c.plus.order + c.minus.order
            fh.write(f"# couple {i} order {order}\n")
            fh.write(couple_to_text(c))
            fh.write("\n")
    with open(out_dir / "molecules.txt", "w") as fh:
        for i, c in enumerate(couples):
            order = c.plus.order + c.minus.order
            fh.write(f"# molecule {i} order {order}\n")
            fh.write(molecule_to_text(build_molecule(c)))
            fh.write("\n")


def _run_chaos(ec: ExperimentConfig, out_dir: Path, threads: int) -> None:
    spec = ec.specs[0]
    n_steps = max(int(math.ceil(ec.evolve.t_end / ec.evolve.dt - 1e-9)), 1)
    steps = _snapshot_steps(ec.evolve, n_steps)
    rows = []
    for i, s in enumerate(steps):
        fields = collect_fields(
            spec,
            ec.spectrum,
            ec.noise,
            ec.evolve,
            ec.M,
            ec.base_seed,
            snapshot=i,
            threads=threads,
        )
        value = chaos_defect(fields, ec.modes)
        rows.append([str(i), _F(s * ec.evolve.dt), _F(value)])
    _write_csv(out_dir / "chaos.csv", ["snapshot", "t", "defect"], rows)


# ---------------------------------------------------------------------------
# entry points


def resolve_out_dir(ec: ExperimentConfig, out_flag: Optional[str]) -> Path:
    """--out beats the config; relative paths live under WAVEKIN_OUT."""
    target = out_flag if out_flag is not None else ec.out
    if target is None:
        raise ConfigError(
            "missing required field [experiment] out (or pass --out)"
        )
    path = Path(target)
    if not path.is_absolute():
        root = os.environ.get(ENV_OUT_ROOT)
        if root:
            path = Path(root) / path
    return path


def run(
    config_path,
    experiment: Optional[str] = None,
    out: Optional[str] = None,
    threads: int = 1,
    seed: Optional[int] = None,
    stderr=None,
) -> int:
    """Execute one experiment config; 0 on success, 2 config, 1 runtime."""
    stderr = stderr if stderr is not None else sys.stderr
    start = time.monotonic()
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=stderr)
        return 2
    try:
        ec = parse_config(text, experiment=experiment, seed=seed)
        if threads < 1:
            raise ConfigError(f"bad value for --threads: need >= 1, got {threads}")
        _check_budget(ec)
        out_dir = resolve_out_dir(ec, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return 2
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if ec.experiment == "census":
            _run_census(ec, out_dir)
        elif ec.experiment == "first-iterate":
            _run_first_iterate(ec, out_dir)
        elif ec.experiment == "wke":
            _run_wke(ec, out_dir)
        elif ec.experiment == "ensemble":
            _run_ensemble(ec, out_dir, threads)
        elif ec.experiment == "compare":
            _run_compare(ec, out_dir, threads)
        elif ec.experiment == "diagrams":
            _run_diagrams(ec, out_dir)
        elif ec.experiment == "chaos":
            _run_chaos(ec, out_dir, threads)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    manifest = RunManifest(
        experiment=ec.experiment,
        version=VERSION,
        wall_clock_seconds=time.monotonic() - start,
        config_text=text,
        config=_config_dict(ec),
    )
    write_manifest(out_dir, manifest)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wavekin",
        description="Run one wave-kinetics experiment from an INI config.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="path to the INI config")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument(
        "--threads", type=int, default=1, help="worker cap for ensemble members"
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="override [ensemble] base_seed"
    )
    args = parser.parse_args(argv)
    return run(
        args.config,
        experiment=args.experiment,
        out=args.out,
        threads=args.threads,
        seed=args.seed,
    )


if __name__ == "__main__":
    sys.exit(main())
