"""Wave-number lattice, dispersion relation, and resonance arithmetic.

Wave numbers live on the scaled integer lattice: a mode is stored as an
integer vector m, the physical wave number is k = m/L.  Keeping the
integer representation everywhere lets the resonance factor be evaluated
without cancellation, and exactly (as a rational) when the aspect ratios
are rational.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

# Largest denominator accepted when promoting a float aspect ratio to an
# exact rational.  Floats that fail the round trip (sqrt(2), ...) stay
# floats and mark that component as generically irrational.
_RATIONAL_DENOM_CAP = 10**6

# Documented stand-in for "generic" (rationally independent) aspect
# ratios, truncated to double precision.
GENERIC_BETA = (1.0, math.sqrt(2.0), math.sqrt(3.0))

# Lookup tables for mode indexing are dense boxes; refuse absurd ones.
_TABLE_ENTRY_CAP = 200_000_000


def rational_or_none(value) -> Optional[Fraction]:
    """Exact rational content of an aspect-ratio component.

    Integers and Fractions pass through.  A float is promoted only when
    a bounded-denominator rational reproduces it bit for bit; otherwise
    None is returned and the component is treated as irrational.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"aspect ratio must be finite, got {value!r}")
    cand = Fraction(v).limit_denominator(_RATIONAL_DENOM_CAP)
    if float(cand) == v:
        return cand
    return None


@dataclass(frozen=True)
class BoxSpec:
    """Geometry and scaling of one periodic box.

    d: dimension, 1 to 3.
    L: box size, >= 1.
    beta: d positive aspect ratios entering omega(k) = sum beta_j k_j^2.
    cutoff: radius of the Euclidean ball |k| <= cutoff kept after
        truncation (the ball boundary is included).  cutoff = 0 keeps
        the single mode m = 0.
    gamma: scaling exponent, epsilon = L**-gamma.  math.inf is accepted
        as the linear-dynamics switch (epsilon = 0).
    """

    d: int
    L: float
    beta: tuple
    cutoff: float
    gamma: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2, or 3, got {self.d}")
        if not (self.L >= 1):
            raise ValueError(f"L must be >= 1, got {self.L}")
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != self.d:
            raise ValueError(f"beta must have length d={self.d}, got {self.beta!r}")
        if not all(b > 0 and math.isfinite(b) for b in beta):
            raise ValueError(f"beta components must be positive, got {self.beta!r}")
        if not (self.cutoff >= 0):
            raise ValueError(f"cutoff must be >= 0, got {self.cutoff}")
        if not (self.gamma >= 0):
            raise ValueError(f"gamma must be >= 0 (math.inf allowed), got {self.gamma}")
        # keep the original objects for exact classification, floats for math
        object.__setattr__(self, "_beta_raw", tuple(self.beta))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "cutoff", float(self.cutoff))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def epsilon(self) -> float:
        """Nonlinearity strength L**-gamma; 0 when gamma is infinite."""
        if math.isinf(self.gamma):
            return 0.0
        return self.L ** (-self.gamma)

    @property
    def t_kin(self) -> float:
        """Kinetic time scale epsilon**-2."""
        eps = self.epsilon
        return math.inf if eps == 0.0 else eps**-2

    @property
    def beta_fractions(self) -> tuple:
        """Per-component exact rationals, None marking irrational entries."""
        return tuple(rational_or_none(b) for b in self._beta_raw)

    @property
    def beta_rational(self) -> bool:
        return all(f is not None for f in self.beta_fractions)

    @property
    def beta_label(self) -> str:
        """Compact text key for CSV output, e.g. '1x1' or '1x1.414213562'."""
        return "x".join(f"{b:.10g}" for b in self.beta)

    @property
    def radius2(self) -> float:
        """Squared truncation radius in integer-mode units, (cutoff*L)**2."""
        return (self.cutoff * self.L) ** 2


class ModeSet:
    """Ordered set of integer mode vectors with O(1) index lookup.

    The order is whatever the constructor receives (build_lattice sorts
    lexicographically).  The set must contain m = 0 and be closed under
    negation; both are checked.
    """

    def __init__(self, modes):
        modes = np.ascontiguousarray(np.asarray(modes, dtype=np.int64))
        if modes.ndim != 2 or modes.shape[0] == 0:
            raise ValueError("modes must be a nonempty (n, d) integer array")
        self._modes = modes
        n, d = modes.shape
        lo = modes.min(axis=0)
        hi = modes.max(axis=0)
        shape = tuple(int(h - l) + 1 for l, h in zip(lo, hi))
        entries = 1
        for s in shape:
            entries *= s
        if entries > _TABLE_ENTRY_CAP:
            raise ValueError(
                f"mode lookup table would need {entries} entries "
                f"(cap {_TABLE_ENTRY_CAP}); reduce cutoff*L"
            )
        table = np.full(shape, -1, dtype=np.int64)
        table[tuple((modes - lo).T)] = np.arange(n, dtype=np.int64)
        self._lo = lo
        self._hi = hi
        self._table = table
        if self.index(np.zeros(d, dtype=np.int64)) < 0:
            raise ValueError("mode set must contain m = 0")
        if np.any(self.index(-modes) < 0):
            raise ValueError("mode set must be closed under negation")

    def __len__(self) -> int:
        return self._modes.shape[0]

    @property
    def modes(self) -> np.ndarray:
        """(n, d) int64 array; do not mutate."""
        return self._modes

    @property
    def d(self) -> int:
        return self._modes.shape[1]

    def index(self, m) -> np.ndarray:
        """Indices of mode vectors, -1 for vectors outside the set.

        Accepts a single (d,) vector or a batch (..., d); returns an
        int64 scalar array matching the leading shape.
        """
        m = np.asarray(m, dtype=np.int64)
        off = m - self._lo
        inside = np.all((off >= 0) & (m <= self._hi), axis=-1)
        off = np.where(inside[..., None], off, 0)
        idx = self._table[tuple(np.moveaxis(off, -1, 0))]
        return np.where(inside, idx, -1)

    def contains(self, m) -> np.ndarray:
        return self.index(m) >= 0

    def __repr__(self):
        return f"ModeSet(n={len(self)}, d={self.d})"


def build_lattice(spec: BoxSpec, max_modes: int = 2_000_000) -> ModeSet:
    """All integer modes with |m| <= cutoff*L, sorted lexicographically.

    Raises ValueError when the count would exceed max_modes (the guard
    fires on the bounding box before anything large is materialized).
    """
    r2 = spec.radius2
    half = math.isqrt(int(r2))
    est = (2 * half + 1) ** spec.d
    if est > 4 * max_modes:
        raise ValueError(
            f"mode budget exceeded: bounding box holds {est} candidates "
            f"for max_modes={max_modes}"
        )
    axes = [np.arange(-half, half + 1, dtype=np.int64) for _ in range(spec.d)]
    grids = np.meshgrid(*axes, indexing="ij")
    m = np.stack([g.ravel() for g in grids], axis=-1)
    keep = (m * m).sum(axis=1) <= r2
    m = m[keep]
    if m.shape[0] > max_modes:
        raise ValueError(f"mode budget exceeded: {m.shape[0]} > {max_modes}")
    order = np.lexsort(tuple(m[:, j] for j in reversed(range(spec.d))))
    return ModeSet(m[order])


def omega(spec: BoxSpec, m) -> np.ndarray:
    """Dispersion relation omega(k) = sum_j beta_j (m_j/L)^2.

    Accepts a single integer vector or a batch (..., d).  The integer
    squares are formed exactly before the single float division by L^2.
    """
    m = np.asarray(m, dtype=np.int64)
    beta = np.asarray(spec.beta)
    val = ((m * m) * beta).sum(axis=-1) / (spec.L * spec.L)
    return val


def omega_exact(spec: BoxSpec, m) -> Fraction:
    """omega as an exact Fraction; requires every beta component rational."""
    fracs = spec.beta_fractions
    if not spec.beta_rational:
        raise ValueError("omega_exact needs rational beta components")
    m = np.asarray(m, dtype=np.int64)
    if m.shape != (spec.d,):
        raise ValueError("omega_exact takes a single mode vector")
    lf = rational_or_none(spec.L)
    if lf is None:
        raise ValueError("omega_exact needs a rational box size")
    total = sum(f * int(mj) * int(mj) for f, mj in zip(fracs, m))
    return total / (lf * lf)


def resonance(spec: BoxSpec, k1, k2, k3, k, strict: bool = False):
    """Resonance factor Omega = omega(k1) - omega(k2) + omega(k3) - omega(k).

    On momentum-admissible quadruples (k1 - k2 + k3 = k) the value is
    computed through the cancellation-free factored form

        Omega = -(2/L^2) * sum_j beta_j (m1 - m)_j (m3 - m)_j.

    Rows violating the momentum constraint fall back to the direct
    frequency difference, or raise when strict is set.  Inputs may be
    single vectors or batches with a common leading shape.
    """
    k1 = np.asarray(k1, dtype=np.int64)
    k2 = np.asarray(k2, dtype=np.int64)
    k3 = np.asarray(k3, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    admissible = np.all(k1 - k2 + k3 == k, axis=-1)
    if strict and not np.all(admissible):
        raise ValueError("momentum constraint k1 - k2 + k3 = k violated")
    beta = np.asarray(spec.beta)
    a = k1 - k
    b = k3 - k
    factored = -2.0 * ((a * b) * beta).sum(axis=-1) / (spec.L * spec.L)
    if np.all(admissible):
        return factored
    direct = omega(spec, k1) - omega(spec, k2) + omega(spec, k3) - omega(spec, k)
    return np.where(admissible, factored, direct)
