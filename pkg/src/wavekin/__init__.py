"""Desk-scale wave kinetic theory laboratory.

Microscopic side: the cubic Schrodinger system on a periodic box, driven
with random-phase data and evolved pseudo-spectrally.  Mesoscopic side:
the wave kinetic equation with its four-term collision operator.  The
two are bridged by second-order perturbation formulas, a resonance
census on the wave-number lattice, and the signed-tree diagram calculus
whose decorated couple sums reproduce the perturbative moments exactly.
"""

__version__ = "0.1.0"

from .diagrams import (
    Couple,
    Decoration,
    Molecule,
    SignedTree,
    build_molecule,
    couple_to_text,
    couple_value,
    enum_couples,
    enum_trees,
    enumerate_decorations,
    is_regular,
    mirror,
    molecule_degrees,
    molecule_to_text,
    regular_couples,
    tau_from_time,
    time_from_tau,
    time_integral,
    trivial_couple,
    truncated_moment,
)
from .ensemble import (
    JointMomentQuery,
    MomentEstimate,
    MomentTable,
    chaos_defect,
    collect_fields,
    ensemble_manifest,
    joint_moment,
    member_seeds,
    moment_table_from_csv,
    moment_table_to_csv,
    run_ensemble,
)
from .evolver import EvolveConfig, conserved, evolve, nonlinear_term, suggest_dt
from .fields import (
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
from .kinetic import (
    DeltaBroadening,
    KineticGrid,
    KineticState,
    WkeTrajectory,
    collision,
    first_iterate_integral,
    first_iterate_sum,
    hierarchy_residual,
    solve_wke,
    write_trajectory_csv,
)
from .lattice import BoxSpec, ModeSet, build_lattice, omega, omega_exact, resonance
from .resonance_census import (
    CensusRow,
    WindowQuery,
    count_exact,
    count_window,
    crossover_scan,
    window_volume,
)

__all__ = [
    "BoxSpec",
    "CensusRow",
    "Couple",
    "Decoration",
    "DeltaBroadening",
    "EvolveConfig",
    "GAUSSIAN",
    "JointMomentQuery",
    "KineticGrid",
    "KineticState",
    "ModeSet",
    "Molecule",
    "MomentEstimate",
    "MomentTable",
    "NoiseLaw",
    "SignedTree",
    "SpectrumFamily",
    "UNIFORM_PHASE",
    "WaveField",
    "WindowQuery",
    "WkeTrajectory",
    "__version__",
    "build_lattice",
    "build_molecule",
    "chaos_defect",
    "collect_fields",
    "collision",
    "conserved",
    "count_exact",
    "count_window",
    "couple_to_text",
    "couple_value",
    "crossover_scan",
    "dump_field",
    "ensemble_manifest",
    "enum_couples",
    "enum_trees",
    "enumerate_decorations",
    "evolve",
    "first_iterate_integral",
    "first_iterate_sum",
    "hierarchy_residual",
    "is_regular",
    "joint_moment",
    "load_field",
    "member_seeds",
    "mirror",
    "molecule_degrees",
    "molecule_to_text",
    "moment_table_from_csv",
    "moment_table_to_csv",
    "nonlinear_term",
    "omega",
    "omega_exact",
    "regular_couples",
    "resonance",
    "run_ensemble",
    "sample_field",
    "solve_wke",
    "spectrum_eval",
    "suggest_dt",
    "tau_from_time",
    "time_from_tau",
    "time_integral",
    "trivial_couple",
    "truncated_moment",
    "window_volume",
    "write_trajectory_csv",
]
