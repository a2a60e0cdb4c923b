"""Random-phase initial data on the truncated lattice.

A field assigns one complex amplitude per lattice mode.  Initial data is
drawn as A_k = sqrt(n_in(k)) * eta_k with n_in a smooth non-negative
spectrum evaluated at the physical wavenumber k = m/L and eta_k i.i.d.
unit-variance complex noise.

Sampling uses a counter-based generator (Philox) keyed by the seed, with
one vectorized draw laid out in the canonical (sorted) mode order, so
mode i always consumes the same counter range: fields are bit-identical
for a given (seed, spec, family, law) no matter how callers iterate or
partition work around them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import BoxSpec, ModeSet, build_lattice

_MAGIC = b"WVKF"
_VERSION = 1


@dataclass(frozen=True)
class SpectrumFamily:
    """Radially-parameterized initial spectrum n_in.

    Use the classmethod constructors; `tag` is one of gaussian_bump,
    plateau, custom_table.
    """

    tag: str
    amplitude: float = 0.0
    width: float = 0.0
    center: tuple = ()
    table_radii: tuple = ()
    table_values: tuple = ()

    @classmethod
    def gaussian_bump(cls, amplitude: float, width: float, center=()) -> "SpectrumFamily":
        if amplitude < 0 or width <= 0:
            raise ValueError("gaussian_bump needs amplitude >= 0 and width > 0")
        return cls("gaussian_bump", float(amplitude), float(width),
                   tuple(float(c) for c in center))

    @classmethod
    def plateau(cls, amplitude: float, width: float, center=()) -> "SpectrumFamily":
        """Flat top a for r <= w/2, then a smooth cos^2 taper to 0 at r = w."""
        if amplitude < 0 or width <= 0:
            raise ValueError("plateau needs amplitude >= 0 and width > 0")
        return cls("plateau", float(amplitude), float(width),
                   tuple(float(c) for c in center))

    @classmethod
    def custom_table(cls, radii, values) -> "SpectrumFamily":
        r = np.asarray(radii, dtype=float)
        v = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or len(r) < 2:
            raise ValueError("custom_table needs matching 1-d radii/values, >= 2 points")
        if not np.all(np.diff(r) > 0):
            raise ValueError("custom_table radii must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("custom_table values must be >= 0")
        return cls("custom_table", table_radii=tuple(r), table_values=tuple(v))


def spectrum_eval(f: SpectrumFamily, k) -> np.ndarray:
    """Evaluate the spectrum at physical wavenumber(s) k, batch-friendly.

    k may be a single d-vector or an (..., d) array; returns a scalar
    array matching the leading shape.  custom_table raises outside its
    tabulated radial range rather than extrapolate.
    """
    k = np.asarray(k, dtype=float)
    if f.tag == "custom_table":
        r = np.sqrt((k * k).sum(axis=-1))
        lo, hi = f.table_radii[0], f.table_radii[-1]
        if np.any(r < lo) or np.any(r > hi):
            raise ValueError(
                f"custom_table query outside tabulated range [{lo}, {hi}]"
            )
        return np.interp(r, f.table_radii, f.table_values)
    center = np.asarray(f.center, dtype=float) if f.center else np.zeros(k.shape[-1])
    r2 = ((k - center) ** 2).sum(axis=-1)
    if f.tag == "gaussian_bump":
        return f.amplitude * np.exp(-r2 / (f.width * f.width))
    if f.tag == "plateau":
        r = np.sqrt(r2)
        half = f.width / 2.0
        out = np.zeros_like(r)
        out = np.where(r <= half, f.amplitude, out)
        ramp = (r > half) & (r < f.width)
        out = np.where(
            ramp,
            f.amplitude * np.cos(np.pi * (r - half) / f.width) ** 2,
            out,
        )
        return out
    raise ValueError(f"unknown spectrum family {f.tag!r}")


@dataclass(frozen=True)
class NoiseLaw:
    """Unit-variance complex noise law: gaussian or uniform_phase."""

    tag: str

    def __post_init__(self):
        if self.tag not in ("gaussian", "uniform_phase"):
            raise ValueError(f"unknown noise law {self.tag!r}")


GAUSSIAN = NoiseLaw("gaussian")
UNIFORM_PHASE = NoiseLaw("uniform_phase")


@dataclass
class WaveField:
    """Complex amplitudes indexed like mode_set.modes, stamped with time t."""

    spec: BoxSpec
    mode_set: ModeSet
    amplitudes: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        amp = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amp.shape != (len(self.mode_set),):
            raise ValueError(
                f"amplitudes shape {amp.shape} does not match "
                f"{len(self.mode_set)} modes"
            )
        if not np.all(np.isfinite(amp.view(np.float64))):
            raise ValueError("amplitudes must be finite")
        self.amplitudes = amp
        self.t = float(self.t)

    def copy(self) -> "WaveField":
        return WaveField(self.spec, self.mode_set, self.amplitudes.copy(), self.t)


def sample_field(
    spec: BoxSpec,
    f: SpectrumFamily,
    law: NoiseLaw,
    seed: int,
    mode_set: Optional[ModeSet] = None,
) -> WaveField:
    """Draw A_k = sqrt(n_in(k)) * eta_k at t = 0.

    Bit-identical for identical (seed, spec, f, law).  Pass a prebuilt
    mode_set to skip the lattice rebuild; it must be the canonical one.
    """
    ms = mode_set if mode_set is not None else build_lattice(spec)
    n_in = spectrum_eval(f, ms.modes / spec.L)
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    n = len(ms)
    if law.tag == "gaussian":
        g = rng.standard_normal((n, 2))
        eta = (g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0)
    else:
        eta = np.exp(2j * np.pi * rng.random(n))
    return WaveField(spec, ms, np.sqrt(n_in) * eta, 0.0)


def dump_field(field_: WaveField) -> bytes:
    """Serialize to the little-endian binary field record."""
    spec = field_.spec
    head = _MAGIC + struct.pack("<II", _VERSION, spec.d)
    head += struct.pack("<dddd", spec.L, spec.cutoff, spec.gamma, field_.t)
    head += struct.pack(f"<{spec.d}d", *spec.beta)
    head += struct.pack("<Q", len(field_.mode_set))
    modes = np.ascontiguousarray(field_.mode_set.modes, dtype="<i8")
    amps = np.ascontiguousarray(field_.amplitudes, dtype="<c16")
    return head + modes.tobytes() + amps.tobytes()


def load_field(raw: bytes) -> WaveField:
    """Inverse of dump_field.  Raises ValueError on a malformed record."""
    if raw[:4] != _MAGIC:
        raise ValueError("not a field record (bad magic)")
    off = 4
    version, d = struct.unpack_from("<II", raw, off)
    off += 8
    if version != _VERSION:
        raise ValueError(f"unsupported field record version {version}")
    L, cutoff, gamma, t = struct.unpack_from("<dddd", raw, off)
    off += 32
    beta = struct.unpack_from(f"<{d}d", raw, off)
    off += 8 * d
    (count,) = struct.unpack_from("<Q", raw, off)
    off += 8
    need = off + count * d * 8 + count * 16
    if len(raw) != need:
        raise ValueError(f"field record length {len(raw)} != expected {need}")
    modes = np.frombuffer(raw, dtype="<i8", count=count * d, offset=off)
    off += count * d * 8
    amps = np.frombuffer(raw, dtype="<c16", count=count, offset=off)
    spec = BoxSpec(d=d, L=L, beta=beta, cutoff=cutoff, gamma=gamma)
    ms = ModeSet(modes.reshape(count, d).astype(np.int64))
    return WaveField(spec, ms, amps.astype(np.complex128), t)
