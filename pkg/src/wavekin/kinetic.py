"""Continuum kinetic layer: collision operator, WKE time stepping, and
the second-order lattice/continuum predictions they must match.

Everything here lives on a uniform Cartesian quadrature mesh inside the
cutoff ball.  The sharp frequency delta of the kinetic equation is
realized as a narrow even kernel of unit integral (`DeltaBroadening`);
its width plays the role of the inverse observation time.

The collision sum is organized over the free pair (k1, k3) with
k2 = k1 + k3 - k eliminated by the momentum constraint, and the
product bracket is evaluated in expanded polynomial form

    n1 n2 n3 - n n2 n3 + n n1 n3 - n n1 n2

so vanishing values never divide.  On top of the pairing symmetry
(which conserves mass on its own) an optional state-weighted rank-2
correction removes the O(width) mass and energy defects exactly; the
correction is proportional to the state, so it cannot push empty
regions negative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fields import SpectrumFamily, spectrum_eval
from .lattice import BoxSpec, ModeSet, build_lattice

# Quadruple-loop budget, same convention as the census module: the
# guard fires on the pair count before any large array exists.
_DEFAULT_PAIR_BUDGET = 500_000_000

# Row block size for the (pair, pair) matrices of the second-order
# sums; keeps peak memory near block * n_modes, not n_modes**2.
_BLOCK_ROWS = 512

# Default abort threshold for the WKE integrator.
_DEFAULT_SUP_BOUND = 1.0e6


@dataclass(frozen=True)
class KineticGrid:
    """Uniform Cartesian quadrature mesh for the cutoff ball.

    Nodes are j*h for integer vectors j with |j*h| <= cutoff, so the
    mesh contains the origin and is symmetric under k -> -k.  beta are
    the dispersion aspect ratios, omega(k) = sum_j beta_j k_j^2.
    """

    d: int
    cutoff: float
    h: float
    beta: tuple

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2, or 3, got {self.d}")
        if not (self.cutoff > 0 and math.isfinite(self.cutoff)):
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"h must be positive, got {self.h}")
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != self.d or not all(b > 0 and math.isfinite(b) for b in beta):
            raise ValueError(f"beta must be {self.d} positive floats, got {self.beta!r}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "cutoff", float(self.cutoff))
        object.__setattr__(self, "h", float(self.h))
        half = int(math.floor(self.cutoff / self.h * (1.0 + 1e-12)))
        axes = [np.arange(-half, half + 1, dtype=np.int64) for _ in range(self.d)]
        grids = np.meshgrid(*axes, indexing="ij")
        j = np.stack([g.ravel() for g in grids], axis=-1)
        # boundary nodes are kept; the tolerance absorbs the rounding of
        # h*h when h is not a binary fraction (h = 1/20 and friends)
        keep = (j * j).sum(axis=1) * (self.h * self.h) <= self.cutoff**2 * (1.0 + 1e-12)
        j = j[keep]
        order = np.lexsort(tuple(j[:, c] for c in reversed(range(self.d))))
        object.__setattr__(self, "_ms", ModeSet(j[order]))
        nodes = self._ms.modes.astype(float) * self.h
        nodes.setflags(write=False)
        om = (nodes * nodes * np.asarray(beta)).sum(axis=1)
        om.setflags(write=False)
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_omega", om)

    def __len__(self) -> int:
        return len(self._ms)

    @property
    def nodes(self) -> np.ndarray:
        """(n, d) float array of quadrature nodes; do not mutate."""
        return self._nodes

    @property
    def omega(self) -> np.ndarray:
        """Dispersion value at each node."""
        return self._omega

    @property
    def weight(self) -> float:
        """Quadrature weight h**d of one node."""
        return self.h**self.d

    @property
    def freq_spacing(self) -> float:
        """Scale of the smallest nonzero resonance gap on the mesh.

        Omega factors as -2 sum_j beta_j a_j b_j with a, b integer
        multiples of h, so the gap scale is 2 h^2 min(beta).
        """
        return 2.0 * self.h * self.h * min(self.beta)

    def index_of(self, k) -> np.ndarray:
        """Node indices of physical wave vectors, -1 off the mesh."""
        k = np.asarray(k, dtype=float)
        j = np.rint(k / self.h).astype(np.int64)
        on_mesh = np.all(np.abs(j * self.h - k) <= 1e-9 * (1.0 + np.abs(k)), axis=-1)
        idx = self._ms.index(j)
        return np.where(on_mesh, idx, -1)


@dataclass(frozen=True)
class DeltaBroadening:
    """Even unit-mass kernel standing in for the frequency delta."""

    width: float
    kernel: str = "gaussian"

    def __post_init__(self):
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ValueError(f"width must be positive, got {self.width}")
        if self.kernel not in ("box", "gaussian"):
            raise ValueError(f"kernel must be 'box' or 'gaussian', got {self.kernel!r}")

    def density(self, gap) -> np.ndarray:
        """Kernel density at the frequency gap(s)."""
        x = np.asarray(gap, dtype=float)
        w = self.width
        if self.kernel == "gaussian":
            return np.exp(-0.5 * (x / w) ** 2) / (w * math.sqrt(2.0 * math.pi))
        return np.where(np.abs(x) <= w, 0.5 / w, 0.0)

    @classmethod
    def for_grid(cls, grid: KineticGrid, factor: float = 2.0, kernel: str = "gaussian"):
        """Default width tied to the mesh resonance-gap scale."""
        return cls(width=factor * grid.freq_spacing, kernel=kernel)


@dataclass
class KineticState:
    """Spectral density snapshot: values n(tau, k) >= 0 on the grid."""

    tau: float
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.ndim != 1:
            raise ValueError("values must be a flat per-node array")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if np.any(v < 0):
            raise ValueError("values must be non-negative")
        self.values = v

    def mass(self, grid: KineticGrid) -> float:
        return float(self.values.sum() * grid.weight)


def _state_values(grid: KineticGrid, n_in) -> np.ndarray:
    if isinstance(n_in, SpectrumFamily):
        return np.asarray(spectrum_eval(n_in, grid.nodes), dtype=float)
    v = np.asarray(n_in, dtype=float)
    if v.shape != (len(grid),):
        raise ValueError(f"expected {len(grid)} per-node values, got shape {v.shape}")
    return v


def collision(
    grid: KineticGrid,
    phi,
    b: DeltaBroadening,
    *,
    conserve: bool = True,
    rows=None,
) -> np.ndarray:
    """Collision operator on the quadrature mesh.

    For each output node k the quadruple sum runs over free pairs
    (k1, k3) with k2 = k1 + k3 - k required to land on the mesh; the
    momentum delta is consumed by that substitution and the frequency
    delta is the broadened kernel.  With conserve set, the state-
    weighted correction makes the mesh totals of n and omega*n exact
    invariants of the right-hand side.

    rows restricts evaluation to the given output-node indices and
    returns just those entries; the conservation shift needs the full
    mesh, so rows requires conserve=False.
    """
    v = _state_values(grid, phi)
    if np.any(v < 0):
        raise ValueError("collision needs non-negative phi")
    if rows is not None and conserve:
        raise ValueError("rows needs conserve=False; the shift uses the full mesh")
    nodes = grid.nodes
    n = len(grid)
    ms = grid._ms
    j = ms.modes
    beta = np.asarray(grid.beta)
    # Gram matrix of beta-weighted dot products; every Omega matrix is
    # four slices of it, cheaper than a matmul per output node
    g = (nodes * beta) @ nodes.T
    diag = np.diagonal(g)
    if rows is not None:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.intp))
        if rows.ndim != 1 or (len(rows) and (rows.min() < 0 or rows.max() >= n)):
            raise ValueError("rows must be valid node indices")
        out = np.empty(len(rows))
        for pos, i in enumerate(rows):
            gi = g[:, i]
            om = -2.0 * (g - gi[:, None] - gi[None, :] + diag[i])
            j2 = j[:, None, :] + j[None, :, :] - j[i]
            idx2 = ms.index(j2)
            valid = idx2 >= 0
            p2 = np.where(valid, v[np.where(valid, idx2, 0)], 0.0)
            p1 = v[:, None]
            p3 = v[None, :]
            p0 = v[i]
            bracket = p1 * p2 * p3 - p0 * p2 * p3 + p0 * p1 * p3 - p0 * p1 * p2
            out[pos] = np.where(valid, bracket * b.density(om), 0.0).sum()
        return out * grid.weight**2
    out = np.empty(n)
    for i in range(n):
        gi = g[:, i]
        om = -2.0 * (g - gi[:, None] - gi[None, :] + diag[i])
        j2 = j[:, None, :] + j[None, :, :] - j[i]
        idx2 = ms.index(j2)
        valid = idx2 >= 0
        p2 = np.where(valid, v[np.where(valid, idx2, 0)], 0.0)
        p1 = v[:, None]
        p3 = v[None, :]
        p0 = v[i]
        bracket = p1 * p2 * p3 - p0 * p2 * p3 + p0 * p1 * p3 - p0 * p1 * p2
        out[i] = np.where(valid, bracket * b.density(om), 0.0).sum()
    out *= grid.weight**2
    if conserve and np.any(out != 0.0):
        out = _conserve_correct(grid, v, out)
    return out


def _conserve_correct(grid: KineticGrid, weight: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Remove mass and energy defects with a state-proportional shift.

    Solves for c0, c1 so that out - weight*(c0 + c1*omega) has exactly
    zero mesh totals of 1 and omega.  The shift is O(width) and
    supported where the state is, so it cannot seed negative values.
    """
    om = grid.omega
    defect = np.array([out.sum(), (out * om).sum()])
    basis = np.stack([weight, weight * om])
    gram = np.array(
        [
            [basis[0].sum(), (basis[0] * om).sum()],
            [basis[1].sum(), (basis[1] * om).sum()],
        ]
    )
    try:
        coef = np.linalg.solve(gram, defect)
    except np.linalg.LinAlgError:
        coef, *_ = np.linalg.lstsq(gram, defect, rcond=None)
    return out - basis[0] * coef[0] - basis[1] * coef[1]


@dataclass
class WkeTrajectory:
    """Output of solve_wke: snapshots plus the clipping audit."""

    grid: KineticGrid
    broadening: DeltaBroadening
    states: tuple
    dtau: float
    n_steps: int
    clip_mass: float
    conserve: bool = True


def solve_wke(
    grid: KineticGrid,
    n_in,
    tau_end: float,
    dtau: float,
    b: Optional[DeltaBroadening] = None,
    *,
    snapshot_taus: Optional[Sequence[float]] = None,
    sup_bound: float = _DEFAULT_SUP_BOUND,
    conserve: bool = True,
) -> WkeTrajectory:
    """March d(tau) n = collision(n) with the classical 4-stage scheme.

    Snapshots are taken at the steps nearest the requested tau values
    (recorded tau is the exact step time).  Negative values after a
    full step are clipped to zero and the clipped mass accumulated;
    stage inputs are clamped at zero without logging.  A sup-norm above
    sup_bound aborts with the offending step index.
    """
    if not (dtau > 0):
        raise ValueError(f"dtau must be positive, got {dtau}")
    if not (tau_end >= dtau):
        raise ValueError(f"tau_end must be >= dtau, got {tau_end}")
    if b is None:
        b = DeltaBroadening.for_grid(grid)
    state = _state_values(grid, n_in).copy()
    if np.any(state < 0):
        raise ValueError("n_in must be non-negative")
    n_steps = int(round(tau_end / dtau))
    if abs(n_steps * dtau - tau_end) > 1e-9 * max(1.0, abs(tau_end)):
        n_steps = int(math.ceil(tau_end / dtau - 1e-12))
    if snapshot_taus is None:
        snapshot_taus = (tau_end,)
    want = {}
    for tau in snapshot_taus:
        if not (0.0 <= tau <= n_steps * dtau * (1.0 + 1e-12)):
            raise ValueError(f"snapshot tau {tau} outside [0, {n_steps * dtau}]")
        want.setdefault(int(round(tau / dtau)), None)
    states = []
    if 0 in want:
        states.append(KineticState(0.0, state.copy()))
    clip_total = 0.0

    def rhs(v):
        return collision(grid, np.maximum(v, 0.0), b, conserve=conserve)

    for step in range(1, n_steps + 1):
        s1 = rhs(state)
        s2 = rhs(state + 0.5 * dtau * s1)
        s3 = rhs(state + 0.5 * dtau * s2)
        s4 = rhs(state + dtau * s3)
        state = state + (dtau / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        neg = state < 0.0
        if np.any(neg):
            clip_total += float(-state[neg].sum()) * grid.weight
            state[neg] = 0.0
        sup = float(state.max(initial=0.0))
        if not math.isfinite(sup) or sup > sup_bound:
            raise RuntimeError(
                f"wke blow-up at step {step}: sup-norm {sup:.6g} "
                f"exceeds bound {sup_bound:.6g}"
            )
        if step in want:
            states.append(KineticState(step * dtau, state.copy()))
    return WkeTrajectory(
        grid=grid,
        broadening=b,
        states=tuple(states),
        dtau=dtau,
        n_steps=n_steps,
        clip_mass=clip_total,
        conserve=conserve,
    )


def write_trajectory_csv(traj: WkeTrajectory, path) -> None:
    """CSV dump: one row per (snapshot, node) with full-precision floats."""
    d = traj.grid.d
    header = ["tau"] + [f"k_{c + 1}" for c in range(d)] + ["n"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for st in traj.states:
            for node, val in zip(traj.grid.nodes, st.values):
                w.writerow(
                    [f"{st.tau:.17g}"]
                    + [f"{c:.17g}" for c in node]
                    + [f"{val:.17g}"]
                )


def _sinc2(x: np.ndarray) -> np.ndarray:
    s = np.sinc(x)
    return s * s


def first_iterate_sum(
    spec: BoxSpec,
    n_in: SpectrumFamily,
    t: float,
    k,
    *,
    pair_budget: int = _DEFAULT_PAIR_BUDGET,
) -> float:
    """Second-order lattice prediction for E|A_k(t)|^2 - n_in(k).

    The positive term sums n1 n2 n3 over free pairs (k1, k3) in the
    truncated mode set with k2 = k1 + k3 - k required to stay in the
    set; the three companion terms put the free pairs on the modes that
    carry spectrum factors and leave the momentum-determined mode
    unconstrained (it only enters through its frequency).  All share
    the kernel (sin(pi Omega t) / (pi Omega t))^2.
    """
    if not (t > 0):
        raise ValueError(f"t must be positive, got {t}")
    m = np.asarray(k, dtype=np.int64)
    if m.shape != (spec.d,):
        raise ValueError(f"k must be a single integer mode of length {spec.d}")
    ms = build_lattice(spec)
    n = len(ms)
    pairs = 3 * n * n
    if pairs > pair_budget:
        raise ValueError(
            f"first-iterate budget exceeded: {pairs} (k1, k3) pairs for "
            f"{n} modes, budget {pair_budget}"
        )
    modes = ms.modes
    ell2 = spec.L * spec.L
    beta = np.asarray(spec.beta)
    v = np.asarray(spectrum_eval(n_in, modes / spec.L), dtype=float)
    nk = float(spectrum_eval(n_in, m / spec.L))
    # beta-weighted dot products against the output mode
    s = ((modes * beta) @ m.astype(float)) / ell2
    diag = ((modes * modes) * beta).sum(axis=1) / ell2
    t1 = 0.0
    t2 = 0.0
    t3 = 0.0
    for i0 in range(0, n, _BLOCK_ROWS):
        i1 = min(i0 + _BLOCK_ROWS, n)
        blk = modes[i0:i1]
        # free (k1, k3): Omega = -(2/L^2) sum beta (m1 - m)(m3 - m)
        a = blk - m
        bmat = modes - m
        om13 = -2.0 * ((a * beta) @ bmat.T) / ell2
        ker = _sinc2(om13 * t)
        idx2 = ms.index(blk[:, None, :] + modes[None, :, :] - m)
        valid = idx2 >= 0
        p2 = np.where(valid, v[np.where(valid, idx2, 0)], 0.0)
        w13 = v[i0:i1, None] * v[None, :]
        t1 += float((w13 * p2 * ker).sum())
        t3 += float((w13 * ker).sum())
        # free (k2, k3): the determined mode k1 = k + k2 - k3 is
        # unconstrained; Omega = -(2/L^2) sum beta (m2 - m3)(m3 - m)
        g = ((blk * beta) @ modes.T) / ell2
        om23 = -2.0 * (g - s[i0:i1, None] - diag[None, :] + s[None, :])
        t2 += float((w13 * _sinc2(om23 * t)).sum())
    eps = spec.epsilon
    pref = (eps * t) ** 2 / spec.L ** (2 * spec.d)
    # the fourth term equals the second exactly: relabeling the free
    # pair (k1, k2) -> (k3, k2) maps one finite sum onto the other
    return pref * (t1 + nk * (t3 - 2.0 * t2))


def first_iterate_integral(
    grid: KineticGrid,
    n_in: SpectrumFamily,
    t: float,
    k,
    epsilon: float = 1.0,
) -> float:
    """Continuum quadrature of the second-order prediction.

    Mirrors first_iterate_sum term by term: the n2-carrying term keeps
    k2 = k1 + k3 - k inside the cutoff ball (the spectrum is evaluated
    at the exact off-mesh point), the companion terms leave the
    determined mode free.  For large t the kernel t*sinc^2 acts as an
    approximate identity in the frequency gap, so the result
    approaches epsilon^2 t times the collision integral at width 1/t.
    """
    if not (t > 0):
        raise ValueError(f"t must be positive, got {t}")
    k = np.asarray(k, dtype=float)
    if k.shape != (grid.d,):
        raise ValueError(f"k must be a single point of length {grid.d}")
    nodes = grid.nodes
    n = len(grid)
    beta = np.asarray(grid.beta)
    v = np.asarray(spectrum_eval(n_in, nodes), dtype=float)
    nk = float(spectrum_eval(n_in, k))
    s = (nodes * beta) @ k
    diag = grid.omega
    ball2 = grid.cutoff**2 * (1.0 + 1e-12)
    t1 = 0.0
    t2 = 0.0
    t3 = 0.0
    for i0 in range(0, n, _BLOCK_ROWS):
        i1 = min(i0 + _BLOCK_ROWS, n)
        blk = nodes[i0:i1]
        a = blk - k
        bmat = nodes - k
        om13 = -2.0 * ((a * beta) @ bmat.T)
        ker = _sinc2(om13 * t)
        k2 = blk[:, None, :] + nodes[None, :, :] - k
        inball = (k2 * k2).sum(axis=-1) <= ball2
        p2 = spectrum_eval(n_in, k2)
        w13 = v[i0:i1, None] * v[None, :]
        t1 += float((w13 * np.where(inball, p2, 0.0) * ker).sum())
        t3 += float((w13 * ker).sum())
        g = (blk * beta) @ nodes.T
        om23 = -2.0 * (g - s[i0:i1, None] - diag[None, :] + s[None, :])
        t2 += float((w13 * _sinc2(om23 * t)).sum())
    pref = (epsilon * t) ** 2 * grid.weight**2
    # same relabeling identity as in the lattice sum: term four == term two
    return pref * (t1 + nk * (t3 - 2.0 * t2))


def hierarchy_residual(traj: WkeTrajectory, r: int, ks) -> float:
    """Defect of the factorized r-point function in the moment hierarchy.

    Builds n_r(tau) = prod_j n(tau, k_j) from three consecutive
    snapshots, differences it centrally in tau, and subtracts the
    hierarchy right side, which for a product state collapses to
    sum_j (prod_{i != j} n_i) * collision(n)(k_j) at the middle time.
    """
    if r not in (1, 2, 3):
        raise ValueError(f"r must be 1, 2, or 3, got {r}")
    ks = np.asarray(ks, dtype=float)
    if ks.shape != (r, traj.grid.d):
        raise ValueError(f"need {r} wave vectors of length {traj.grid.d}")
    idx = traj.grid.index_of(ks)
    if np.any(idx < 0):
        raise ValueError("hierarchy modes must be grid nodes")
    if len(traj.states) < 3:
        raise ValueError("need at least three snapshots for the tau derivative")
    mid = len(traj.states) // 2
    lo, ce, hi = traj.states[mid - 1], traj.states[mid], traj.states[mid + 1]
    dlo = ce.tau - lo.tau
    dhi = hi.tau - ce.tau
    if abs(dlo - dhi) > 1e-9 * max(dlo, dhi):
        raise ValueError("snapshots around the midpoint must be equally spaced")
    fd = (np.prod(hi.values[idx]) - np.prod(lo.values[idx])) / (dlo + dhi)
    coll = collision(traj.grid, ce.values, traj.broadening, conserve=traj.conserve)
    vals = ce.values[idx]
    rhs = 0.0
    for jj in range(r):
        others = np.prod(np.delete(vals, jj))
        rhs += others * coll[idx[jj]]
    return float(abs(fd - rhs))
