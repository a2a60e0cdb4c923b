import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavekin.fields import (
    GAUSSIAN,
    UNIFORM_PHASE,
    NoiseLaw,
    SpectrumFamily,
    WaveField,
    dump_field,
    load_field,
    sample_field,
    spectrum_eval,
)
from wavekin.lattice import BoxSpec, build_lattice


def spec1d(L=2.0, cutoff=1.0):
    return BoxSpec(d=1, L=L, beta=(1.0,), cutoff=cutoff, gamma=1.0)


class TestSpectrumEval:
    def test_gaussian_bump_origin(self):
        f = SpectrumFamily.gaussian_bump(1.0, 1.0)
        assert spectrum_eval(f, np.array([0.0, 0.0])) == 1.0

    def test_gaussian_bump_unit_radius(self):
        f = SpectrumFamily.gaussian_bump(2.0, 1.0)
        assert spectrum_eval(f, np.array([1.0])) == pytest.approx(
            2.0 * math.exp(-1.0), rel=1e-15
        )

    def test_gaussian_bump_center_offset(self):
        f = SpectrumFamily.gaussian_bump(3.0, 0.5, center=(1.0, -1.0))
        assert spectrum_eval(f, np.array([1.0, -1.0])) == 3.0

    def test_batch_shape(self):
        f = SpectrumFamily.gaussian_bump(1.0, 1.0)
        k = np.zeros((4, 7, 2))
        assert spectrum_eval(f, k).shape == (4, 7)

    def test_plateau_profile(self):
        f = SpectrumFamily.plateau(2.0, 1.0)
        assert spectrum_eval(f, np.array([0.0])) == 2.0
        assert spectrum_eval(f, np.array([0.49])) == 2.0
        mid = spectrum_eval(f, np.array([0.75]))
        assert 0.0 < mid < 2.0
        assert spectrum_eval(f, np.array([1.0])) == 0.0
        assert spectrum_eval(f, np.array([3.0])) == 0.0

    def test_plateau_continuous_at_shoulder(self):
        f = SpectrumFamily.plateau(1.0, 2.0)
        lo = spectrum_eval(f, np.array([1.0 - 1e-9]))
        hi = spectrum_eval(f, np.array([1.0 + 1e-9]))
        assert lo == pytest.approx(1.0, abs=1e-12)
        assert hi == pytest.approx(1.0, abs=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(
        kx=st.floats(-5, 5),
        ky=st.floats(-5, 5),
        amp=st.floats(0.0, 10.0),
        width=st.floats(0.1, 3.0),
    )
    def test_bounded_by_amplitude(self, kx, ky, amp, width):
        k = np.array([kx, ky])
        for f in (
            SpectrumFamily.gaussian_bump(amp, width),
            SpectrumFamily.plateau(amp, width),
        ):
            v = float(spectrum_eval(f, k))
            assert 0.0 <= v <= amp + 1e-12

    def test_custom_table_interp(self):
        f = SpectrumFamily.custom_table([0.0, 1.0, 2.0], [4.0, 2.0, 0.0])
        assert spectrum_eval(f, np.array([0.0, 0.0])) == 4.0
        assert spectrum_eval(f, np.array([0.5, 0.0])) == pytest.approx(3.0)
        assert spectrum_eval(f, np.array([0.0, 2.0])) == 0.0

    def test_custom_table_extrapolation_error(self):
        f = SpectrumFamily.custom_table([0.5, 1.0], [1.0, 0.0])
        with pytest.raises(ValueError, match="outside"):
            spectrum_eval(f, np.array([2.0, 0.0]))
        with pytest.raises(ValueError, match="outside"):
            spectrum_eval(f, np.array([0.0, 0.0]))

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            SpectrumFamily.gaussian_bump(-1.0, 1.0)
        with pytest.raises(ValueError):
            SpectrumFamily.plateau(1.0, 0.0)
        with pytest.raises(ValueError):
            SpectrumFamily.custom_table([0.0, 1.0], [1.0, -1.0])
        with pytest.raises(ValueError):
            SpectrumFamily.custom_table([1.0, 0.5], [1.0, 1.0])
        with pytest.raises(ValueError):
            spectrum_eval(SpectrumFamily("mystery"), np.array([0.0]))

    def test_noise_law_tags(self):
        assert GAUSSIAN.tag == "gaussian"
        assert UNIFORM_PHASE.tag == "uniform_phase"
        with pytest.raises(ValueError):
            NoiseLaw("pink")


class TestWaveField:
    def test_shape_mismatch(self):
        s = spec1d()
        ms = build_lattice(s)
        with pytest.raises(ValueError, match="shape"):
            WaveField(s, ms, np.zeros(len(ms) + 1, dtype=complex))

    def test_nonfinite_rejected(self):
        s = spec1d()
        ms = build_lattice(s)
        bad = np.zeros(len(ms), dtype=complex)
        bad[0] = complex(np.nan, 0.0)
        with pytest.raises(ValueError, match="finite"):
            WaveField(s, ms, bad)

    def test_copy_is_independent(self):
        s = spec1d()
        f = sample_field(s, SpectrumFamily.gaussian_bump(1.0, 1.0), GAUSSIAN, 7)
        g = f.copy()
        g.amplitudes[0] = 0.0
        assert f.amplitudes[0] != 0.0
        assert g.t == f.t


class TestSampleField:
    def setup_method(self):
        self.spec = spec1d()
        self.ms = build_lattice(self.spec)
        self.f = SpectrumFamily.gaussian_bump(1.5, 1.0)

    def test_deterministic(self):
        a = sample_field(self.spec, self.f, GAUSSIAN, 42)
        b = sample_field(self.spec, self.f, GAUSSIAN, 42)
        assert np.array_equal(a.amplitudes, b.amplitudes)
        assert a.t == 0.0

    def test_seed_changes_field(self):
        a = sample_field(self.spec, self.f, GAUSSIAN, 1)
        b = sample_field(self.spec, self.f, GAUSSIAN, 2)
        assert not np.array_equal(a.amplitudes, b.amplitudes)

    def test_prebuilt_mode_set_matches(self):
        a = sample_field(self.spec, self.f, UNIFORM_PHASE, 5)
        b = sample_field(self.spec, self.f, UNIFORM_PHASE, 5, mode_set=self.ms)
        assert np.array_equal(a.amplitudes, b.amplitudes)

    def test_uniform_phase_modulus_exact(self):
        fld = sample_field(self.spec, self.f, UNIFORM_PHASE, 9)
        n_in = spectrum_eval(self.f, self.ms.modes / self.spec.L)
        assert np.abs(fld.amplitudes) ** 2 == pytest.approx(n_in, rel=1e-13)

    def test_zero_spectrum_gives_exact_zero(self):
        table = SpectrumFamily.custom_table([0.0, 10.0], [0.0, 0.0])
        fld = sample_field(self.spec, table, GAUSSIAN, 3)
        assert np.all(fld.amplitudes == 0.0)

    def test_second_moment_over_seeds(self):
        # sample mean of |A|^2 against n_in, 4 sigma margin
        M = 10_000
        acc = np.zeros(len(self.ms))
        for seed in range(M):
            fld = sample_field(self.spec, self.f, GAUSSIAN, seed, mode_set=self.ms)
            acc += np.abs(fld.amplitudes) ** 2
        mean = acc / M
        n_in = spectrum_eval(self.f, self.ms.modes / self.spec.L)
        assert np.all(np.abs(mean - n_in) <= 4.0 * n_in / math.sqrt(M))

    def test_gaussian_fourth_moment_and_mean_zero(self):
        M = 10_000
        acc4 = np.zeros(len(self.ms))
        acc1 = np.zeros(len(self.ms), dtype=complex)
        for seed in range(M):
            fld = sample_field(self.spec, self.f, GAUSSIAN, seed, mode_set=self.ms)
            acc4 += np.abs(fld.amplitudes) ** 4
            acc1 += fld.amplitudes
        n_in = spectrum_eval(self.f, self.ms.modes / self.spec.L)
        # complex gaussian: E|A|^4 = 2 n^2, var = 20 n^4
        err4 = np.abs(acc4 / M - 2.0 * n_in**2)
        assert np.all(err4 <= 4.0 * math.sqrt(20.0) * n_in**2 / math.sqrt(M))
        err1 = np.abs(acc1 / M)
        assert np.all(err1 <= 4.0 * np.sqrt(n_in / M))

    def test_cross_mode_independence(self):
        M = 10_000
        acc = 0.0 + 0.0j
        i, j = 0, 1
        for seed in range(M):
            fld = sample_field(self.spec, self.f, GAUSSIAN, seed, mode_set=self.ms)
            acc += fld.amplitudes[i] * np.conj(fld.amplitudes[j])
        n_in = spectrum_eval(self.f, self.ms.modes / self.spec.L)
        bound = 4.0 * math.sqrt(n_in[i] * n_in[j] / M)
        assert abs(acc / M) <= bound


class TestFieldRecord:
    def test_round_trip(self):
        s = BoxSpec(d=2, L=3.0, beta=(1.0, 2.0), cutoff=1.0, gamma=0.5)
        fld = sample_field(s, SpectrumFamily.gaussian_bump(1.0, 1.0), GAUSSIAN, 11)
        fld.t = 2.5
        raw = dump_field(fld)
        back = load_field(raw)
        assert back.spec == s
        assert np.array_equal(back.mode_set.modes, fld.mode_set.modes)
        assert np.array_equal(back.amplitudes, fld.amplitudes)
        assert back.t == 2.5
        assert dump_field(back) == raw

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            load_field(b"XXXX" + b"\x00" * 64)

    def test_truncated_record(self):
        s = spec1d()
        fld = sample_field(s, SpectrumFamily.gaussian_bump(1.0, 1.0), GAUSSIAN, 1)
        raw = dump_field(fld)
        with pytest.raises(ValueError, match="length"):
            load_field(raw[:-8])
