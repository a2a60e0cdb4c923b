"""Counting lattice triples in quasi-resonance windows.

The window at half-width delta around an output mode k is the set of
momentum-admissible triples (k1, k2, k3), k2 = k1 + k3 - k, with all
three inside the truncation ball and |Omega| <= delta.  Counts are taken
over the free pair (k1, k3).

Arithmetic policy: with rational aspect ratios every comparison reduces
to integers (scale by the common denominator), so window membership and
exact resonance never depend on floating-point luck.  With irrational
components the window test is floating point, but exact resonance is
decided structurally: the rational components must cancel exactly as
integers and each irrational component must vanish on its own,
(k1-k)_j (k3-k)_j = 0.  That criterion assumes the irrational ratios
are rationally independent of each other and of 1, which holds for the
documented generic choice (1, sqrt 2, sqrt 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .lattice import BoxSpec, ModeSet, build_lattice

_DEFAULT_PAIR_BUDGET = 500_000_000
_CHUNK_ROWS = 256


@dataclass(frozen=True)
class WindowQuery:
    spec: BoxSpec
    k: tuple
    delta: float

    def __post_init__(self):
        if not (self.delta >= 0):
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        object.__setattr__(self, "k", tuple(int(c) for c in self.k))
        if len(self.k) != self.spec.d:
            raise ValueError("k must have d components")


@dataclass
class CensusRow:
    beta_label: str
    d: int
    L: float
    t: float
    delta: float
    quasi_count: int
    exact_count: int
    volume_prediction: float

    @property
    def ratio(self) -> float:
        return self.quasi_count / self.exact_count if self.exact_count else math.inf


def _budget_check(n: int, pair_budget: int):
    pairs = n * n
    if pairs > pair_budget:
        raise ValueError(
            f"census budget exceeded: {pairs} (k1, k3) pairs for {n} modes, "
            f"budget {pair_budget}"
        )


def _integer_scaling(spec: BoxSpec):
    """Common-denominator scaling of the rational beta components.

    Returns (rational_idx, coeffs, denom) with coeffs integer so that
    sum_j beta_j a_j b_j over rational j equals (sum coeffs*a*b)/denom.
    """
    fracs = spec.beta_fractions
    idx = [j for j, f in enumerate(fracs) if f is not None]
    if not idx:
        return idx, [], 1
    denom = math.lcm(*[fracs[j].denominator for j in idx])
    coeffs = [int(fracs[j] * denom) for j in idx]
    return idx, coeffs, denom


def _window_threshold(spec: BoxSpec, delta: float, denom: int) -> int:
    """Largest integer W with 2*|W| / (denom * L^2) <= delta, exactly."""
    lf = Fraction(spec.L)
    bound = Fraction(delta) * denom * lf * lf / 2
    return int(math.floor(bound))


def _pair_products(modes: np.ndarray, k: np.ndarray, j: int, i0: int, i1: int):
    a = (modes[i0:i1, j] - k[j])[:, None]
    b = (modes[:, j] - k[j])[None, :]
    return a * b


def count_window(
    q: WindowQuery,
    mode_set: Optional[ModeSet] = None,
    pair_budget: int = _DEFAULT_PAIR_BUDGET,
) -> int:
    """Lattice pairs (k1, k3) with k2 in the set and |Omega| <= delta.

    Exact resonances are included; subtract count_exact for the strictly
    quasi-resonant population.
    """
    spec = q.spec
    ms = mode_set if mode_set is not None else build_lattice(spec)
    _budget_check(len(ms), pair_budget)
    modes = ms.modes
    k = np.asarray(q.k, dtype=np.int64)
    rational = spec.beta_rational
    ridx, coeffs, denom = _integer_scaling(spec)
    if rational:
        thr = _window_threshold(spec, q.delta, denom)
    irr = [j for j in range(spec.d) if j not in ridx]
    beta = spec.beta
    L2 = spec.L * spec.L

    total = 0
    for i0 in range(0, len(ms), _CHUNK_ROWS):
        i1 = min(i0 + _CHUNK_ROWS, len(ms))
        k2 = modes[i0:i1, None, :] + modes[None, :, :] - k
        admissible = ms.index(k2) >= 0
        if rational:
            w = np.zeros((i1 - i0, len(ms)), dtype=np.int64)
            for c, j in zip(coeffs, ridx):
                w += c * _pair_products(modes, k, j, i0, i1)
            inside = np.abs(w) <= thr
        else:
            om = np.zeros((i1 - i0, len(ms)))
            for c, j in zip(coeffs, ridx):
                om += (c / denom) * _pair_products(modes, k, j, i0, i1)
            for j in irr:
                om += beta[j] * _pair_products(modes, k, j, i0, i1)
            inside = np.abs(-2.0 * om / L2) <= q.delta
        total += int(np.count_nonzero(inside & admissible))
    return total


def count_exact(
    spec: BoxSpec,
    k,
    mode_set: Optional[ModeSet] = None,
    pair_budget: int = _DEFAULT_PAIR_BUDGET,
) -> int:
    """Pairs (k1, k3) with Omega = 0 exactly, decided structurally."""
    ms = mode_set if mode_set is not None else build_lattice(spec)
    _budget_check(len(ms), pair_budget)
    modes = ms.modes
    k = np.asarray(k, dtype=np.int64)
    ridx, coeffs, _ = _integer_scaling(spec)
    irr = [j for j in range(spec.d) if j not in ridx]

    total = 0
    for i0 in range(0, len(ms), _CHUNK_ROWS):
        i1 = min(i0 + _CHUNK_ROWS, len(ms))
        k2 = modes[i0:i1, None, :] + modes[None, :, :] - k
        ok = ms.index(k2) >= 0
        if ridx:
            w = np.zeros((i1 - i0, len(ms)), dtype=np.int64)
            for c, j in zip(coeffs, ridx):
                w += c * _pair_products(modes, k, j, i0, i1)
            ok &= w == 0
        for j in irr:
            ok &= _pair_products(modes, k, j, i0, i1) == 0
        total += int(np.count_nonzero(ok))
    return total


def window_volume(spec: BoxSpec, k, delta: float, samples: int = 10**6) -> float:
    """Quasi-Monte-Carlo estimate of Vol(W_delta) in the continuum.

    Integrates the window indicator over (k1, k3) in the box
    [-cutoff, cutoff]^(2d) with a scrambled Halton sequence; the
    momentum delta is consumed by k2 = k1 + k3 - k.  Returns the plain
    volume; multiply by L^(2d) for the lattice-count prediction.
    """
    c = spec.cutoff
    if c == 0 or delta < 0:
        return 0.0
    d = spec.d
    kp = np.asarray(k, dtype=np.int64) / spec.L
    sampler = qmc.Halton(d=2 * d, scramble=True, seed=1905)
    pts = sampler.random(samples) * (2 * c) - c
    k1 = pts[:, :d]
    k3 = pts[:, d:]
    k2 = k1 + k3 - kp
    beta = np.asarray(spec.beta)
    omega_fac = -2.0 * (((k1 - kp) * (k3 - kp)) * beta).sum(axis=1)
    keep = (
        ((k1 * k1).sum(axis=1) <= c * c)
        & ((k3 * k3).sum(axis=1) <= c * c)
        & ((k2 * k2).sum(axis=1) <= c * c)
        & (np.abs(omega_fac) <= delta)
    )
    frac = np.count_nonzero(keep) / samples
    return frac * (2 * c) ** (2 * d)


def crossover_scan(
    specs: Sequence[BoxSpec],
    k,
    times: Sequence[float],
    volume_samples: int = 10**6,
    pair_budget: int = _DEFAULT_PAIR_BUDGET,
) -> list:
    """Quasi vs exact census over a (spec, t) grid with delta = 1/t.

    Quasi counts exclude the exact resonances so the two populations are
    disjoint.  One CensusRow per (spec, t), in input order.
    """
    rows = []
    for spec in specs:
        ms = build_lattice(spec)
        exact = count_exact(spec, k, mode_set=ms, pair_budget=pair_budget)
        for t in times:
            if not t > 0:
                raise ValueError(f"times must be positive, got {t}")
            delta = 1.0 / t
            window = count_window(
                WindowQuery(spec, tuple(np.asarray(k, dtype=np.int64)), delta),
                mode_set=ms,
                pair_budget=pair_budget,
            )
            vol = window_volume(spec, k, delta, samples=volume_samples)
            rows.append(
                CensusRow(
                    beta_label=spec.beta_label,
                    d=spec.d,
                    L=spec.L,
                    t=float(t),
                    delta=delta,
                    quasi_count=window - exact,
                    exact_count=exact,
                    volume_prediction=spec.L ** (2 * spec.d) * vol,
                )
            )
    return rows
