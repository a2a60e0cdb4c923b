"""Figure builders.

Each builder takes a verified result directory and returns a
(Figure, info) pair.  The Figure is a plain matplotlib figure with no
pyplot state behind it; info is a small dict of the numbers that were
drawn, so callers and tests can check a figure without parsing pixels.
Builders verify the directory manifest before reading anything.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from matplotlib.figure import Figure
from matplotlib.lines import Line2D
from matplotlib.patches import Ellipse, FancyArrowPatch

from .io import (
    ResultsError,
    load_census_exact,
    load_compare_rungs,
    load_molecules,
    load_summary,
    verify_manifest,
)

__all__ = [
    "spectrum_compare",
    "census_loglog",
    "defect_vs_L",
    "molecule_sketch",
    "FIGURES",
]

# fixed geometry so repeated renders are byte-identical
_DPI = 110

# error bars span this many standard errors
_BAND_SE = 2
# shaded acceptance band around the kinetic curve, matching the
# four-standard-error flag the summary table itself applies
_ACCEPT_SE = 4

_FAMILY_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")
_KIND_COLORS = ("tab:blue", "tab:red", "tab:green", "tab:purple", "tab:brown")


def _fit_loglog(x, y) -> Tuple[float, float]:
    """Least squares slope of log y against log x, with its standard error.

    Uses every point as given.  With only two points the slope is exact
    and the reported error is zero.
    """
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    design = np.vstack([lx, np.ones_like(lx)]).T
    coef, _, _, _ = np.linalg.lstsq(design, ly, rcond=None)
    slope = float(coef[0])
    n = len(lx)
    if n > 2:
        resid = ly - design @ coef
        sigma2 = float(resid @ resid) / (n - 2)
        cov = sigma2 * np.linalg.inv(design.T @ design)
        stderr = math.sqrt(max(cov[0, 0], 0.0))
    else:
        stderr = 0.0
    return slope, stderr


def _k_magnitudes(table) -> np.ndarray:
    names = [name for name in table if name.startswith("k_")]
    stacked = np.vstack([table[name] for name in names])
    return np.sqrt(np.sum(stacked**2, axis=0))


def spectrum_compare(results_dir) -> Tuple[Figure, dict]:
    """Measured spectra with error bars against the kinetic prediction.

    One panel per box size.  Points are ensemble means with two standard
    error bars; the line is the kinetic solution sampled at the same
    wavenumbers, wrapped in the shaded four standard error band that the
    summary table's own control flag uses.
    """
    manifest = verify_manifest(results_dir)
    summary = load_summary(results_dir)
    rungs = load_compare_rungs(results_dir)
    by_L = {float(L): i for i, L in enumerate(summary["L"])}

    fig = Figure(figsize=(4.2 * len(rungs), 3.6), dpi=_DPI)
    axes = fig.subplots(1, len(rungs), sharey=True, squeeze=False)[0]
    info: dict = {"experiment": manifest["experiment"], "rungs": []}
    for ax, (L, table) in zip(axes, rungs):
        kmag = _k_magnitudes(table)
        order = np.lexsort((np.arange(len(kmag)), kmag))
        ax.errorbar(
            kmag[order],
            table["mc_mean"][order],
            yerr=_BAND_SE * table["mc_stderr"][order],
            fmt="o",
            markersize=3.5,
            capsize=2,
            color="tab:blue",
            label=f"ensemble mean (bars: {_BAND_SE} se)",
        )
        ax.fill_between(
            kmag[order],
            table["wke_n"][order] - _ACCEPT_SE * table["mc_stderr"][order],
            table["wke_n"][order] + _ACCEPT_SE * table["mc_stderr"][order],
            color="tab:red",
            alpha=0.15,
            linewidth=0,
            label=f"{_ACCEPT_SE} se acceptance band",
        )
        ax.plot(
            kmag[order],
            table["wke_n"][order],
            "-",
            color="tab:red",
            linewidth=1.2,
            label="kinetic prediction",
        )
        i = by_L[L]
        flag = str(summary["flag"][i])
        tagline = f"sup defect {summary['sup_defect'][i]:.3g}"
        if flag:
            tagline += f"  [{flag}]"
        ax.set_title(f"L = {L:g}  ({tagline})", fontsize=9)
        ax.set_xlabel("|k|")
        ax.grid(True, alpha=0.3)
        info["rungs"].append(
            {
                "L": L,
                "sup_defect": float(summary["sup_defect"][i]),
                "max_sigma": float(summary["max_sigma"][i]),
                "flag": flag,
                "max_defect": float(np.max(table["defect"], initial=0.0)),
                # acceptance band half-width at the worst-defect mode
                "band_at_worst": float(
                    _ACCEPT_SE * table["mc_stderr"][int(np.argmax(table["defect"]))]
                )
                if len(table["defect"])
                else 0.0,
            }
        )
    axes[0].set_ylabel("spectral density n(k)")
    axes[0].legend(fontsize=8, loc="best")
    fig.suptitle("Ensemble spectrum vs kinetic prediction", fontsize=11)
    fig.tight_layout()
    return fig, info


def census_loglog(results_dir) -> Tuple[Figure, dict]:
    """Exact solution counts against box size on log-log axes.

    One line per dispersion family, each annotated with its least
    squares slope and standard error.  All rungs enter the fit.
    """
    manifest = verify_manifest(results_dir)
    census = load_census_exact(results_dir)
    families = sorted(set(census["family"]))
    fig = Figure(figsize=(5.4, 4.2), dpi=_DPI)
    ax = fig.subplots()
    slopes: Dict[str, Tuple[float, float]] = {}
    for j, family in enumerate(families):
        mask = census["family"] == family
        L = census["L"][mask].astype(float)
        count = census["count"][mask].astype(float)
        order = np.argsort(L)
        L, count = L[order], count[order]
        if len(L) < 2:
            raise ResultsError(
                f"census_exact.csv: family {family!r} has {len(L)} rung(s), "
                "need at least 2 for a slope"
            )
        if np.any(count <= 0):
            raise ResultsError(
                f"census_exact.csv: family {family!r} has a non-positive count, "
                "cannot place it on log axes"
            )
        slope, stderr = _fit_loglog(L, count)
        slopes[str(family)] = (slope, stderr)
        color = _FAMILY_COLORS[j % len(_FAMILY_COLORS)]
        ax.loglog(L, count, "o-", color=color, markersize=5, label=str(family))
        ax.annotate(
            f"slope {slope:.3f} +/- {stderr:.3f}",
            xy=(L[-1], count[-1]),
            xytext=(4, -2 - 11 * j),
            textcoords="offset points",
            fontsize=8,
            color=color,
        )
    ax.set_xlabel("box size L")
    ax.set_ylabel("exact solution count")
    ax.set_title(f"Resonance census growth ({manifest['experiment']})", fontsize=11)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8, loc="upper left")
    fig.tight_layout()
    return fig, {"experiment": manifest["experiment"], "slopes": slopes}


def defect_vs_L(results_dir) -> Tuple[Figure, dict]:
    """Worst and relative spectrum defect as the box grows."""
    manifest = verify_manifest(results_dir)
    summary = load_summary(results_dir)
    order = np.argsort(summary["L"])
    L = summary["L"][order].astype(float)
    sup = summary["sup_defect"][order].astype(float)
    rel = summary["rel_defect"][order].astype(float)
    fig = Figure(figsize=(5.4, 4.2), dpi=_DPI)
    ax = fig.subplots()
    log_y = bool(np.all(sup > 0) and np.all(np.isfinite(rel)) and np.all(rel > 0))
    plot = ax.loglog if log_y else ax.semilogx
    plot(L, sup, "o-", color="tab:blue", label="sup defect")
    if np.all(np.isfinite(rel)):
        plot(L, rel, "s--", color="tab:orange", label="relative defect")
    slope: Optional[float] = None
    if log_y and len(L) >= 2:
        slope, stderr = _fit_loglog(L, sup)
        ax.annotate(
            f"sup defect slope {slope:.3f} +/- {stderr:.3f}",
            xy=(0.02, 0.04),
            xycoords="axes fraction",
            fontsize=8,
        )
    ax.set_xlabel("box size L")
    ax.set_ylabel("defect")
    ax.set_title(f"Spectrum defect vs box size ({manifest['experiment']})", fontsize=11)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    return fig, {
        "experiment": manifest["experiment"],
        "L": [float(v) for v in L],
        "sup_defect": [float(v) for v in sup],
        "slope": slope,
        "log_y": log_y,
    }


_MAX_SKETCHES = 16


def molecule_sketch(results_dir) -> Tuple[Figure, dict]:
    """Draw parsed molecules: atoms on a circle, bonds as colored arcs.

    At most the first 16 molecules are drawn.  Bond color encodes the
    bond kind, the arrow end marks direction; parallel bonds get
    distinct curvatures so they stay visible.
    """
    manifest = verify_manifest(results_dir)
    molecules = load_molecules(results_dir)
    shown = molecules[:_MAX_SKETCHES]
    ncols = min(4, len(shown))
    nrows = (len(shown) + ncols - 1) // ncols
    fig = Figure(figsize=(2.9 * ncols, 2.9 * nrows), dpi=_DPI)
    axes = np.asarray(fig.subplots(nrows, ncols, squeeze=False)).ravel()
    kinds = sorted({b[2] for mol in shown for b in mol.bonds})
    kind_color = {
        kind: _KIND_COLORS[j % len(_KIND_COLORS)] for j, kind in enumerate(kinds)
    }
    for ax in axes:
        ax.set_axis_off()
        ax.set_aspect("equal")
    drawn_bonds = 0
    for ax, mol in zip(axes, shown):
        ax.set_title(f"#{mol.index}  order {mol.order}", fontsize=8)
        ax.set_xlim(-1.6, 1.6)
        ax.set_ylim(-1.6, 1.6)
        if not mol.atoms:
            ax.text(0, 0, "no internal atoms", ha="center", va="center", fontsize=8)
            continue
        n = len(mol.atoms)
        angles = -np.pi / 2 + 2 * np.pi * np.arange(n) / n
        pos = {
            name: (math.cos(a), math.sin(a)) for name, a in zip(mol.atoms, angles)
        }
        # spread parallel bonds over distinct curvatures
        seen: Dict[Tuple[str, str], int] = {}
        for a, b, kind, direction in mol.bonds:
            drawn_bonds += 1
            color = kind_color[kind]
            if a == b:
                x, y = pos[a]
                ax.add_patch(
                    Ellipse(
                        (1.22 * x, 1.22 * y),
                        0.42,
                        0.26,
                        angle=math.degrees(math.atan2(y, x)),
                        fill=False,
                        color=color,
                        linewidth=1.1,
                    )
                )
                continue
            key = (a, b) if a <= b else (b, a)
            dup = seen.get(key, 0)
            seen[key] = dup + 1
            rad = 0.22 * ((dup + 1) // 2) * (1 if dup % 2 == 0 else -1)
            start, end = (pos[a], pos[b]) if direction >= 0 else (pos[b], pos[a])
            ax.add_patch(
                FancyArrowPatch(
                    start,
                    end,
                    connectionstyle=f"arc3,rad={rad:.3f}",
                    arrowstyle="-|>",
                    mutation_scale=9,
                    color=color,
                    linewidth=1.1,
                    shrinkA=7,
                    shrinkB=7,
                )
            )
        for name, (x, y) in pos.items():
            ax.plot([x], [y], "o", color="black", markersize=5)
            ax.annotate(
                name,
                xy=(x, y),
                xytext=(1.28 * x, 1.28 * y),
                ha="center",
                va="center",
                fontsize=7,
            )
    if kinds:
        handles = [
            Line2D([], [], color=kind_color[k], linewidth=1.4, label=k) for k in kinds
        ]
        fig.legend(handles=handles, fontsize=7, loc="lower right", ncol=len(kinds))
    fig.suptitle(
        f"Molecules ({manifest['experiment']}): {len(shown)} of {len(molecules)}",
        fontsize=11,
    )
    fig.tight_layout(rect=(0, 0.03, 1, 0.97))
    return fig, {
        "experiment": manifest["experiment"],
        "total": len(molecules),
        "drawn": len(shown),
        "bonds_drawn": drawn_bonds,
        "kinds": kinds,
    }


FIGURES = {
    "spectrum_compare": spectrum_compare,
    "census_loglog": census_loglog,
    "defect_vs_L": defect_vs_L,
    "molecule_sketch": molecule_sketch,
}
