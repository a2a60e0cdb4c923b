"""Figures for wavekin experiment output directories.

Consumes only the files the ``wavekin`` command line tool writes
(manifest.json plus CSV and text tables); never imports the simulation
package itself.
"""

from .figures import (
    FIGURES,
    census_loglog,
    defect_vs_L,
    molecule_sketch,
    spectrum_compare,
)
from .io import (
    MoleculeSketchData,
    ResultsError,
    SchemaError,
    load_census_exact,
    load_census_window,
    load_compare_rungs,
    load_molecules,
    load_summary,
    load_table,
    parse_molecules,
    verify_manifest,
)
from .render import FigureRequest, main, render

__version__ = "0.1.0"

__all__ = [
    "FIGURES",
    "FigureRequest",
    "MoleculeSketchData",
    "ResultsError",
    "SchemaError",
    "census_loglog",
    "defect_vs_L",
    "load_census_exact",
    "load_census_window",
    "load_compare_rungs",
    "load_molecules",
    "load_summary",
    "load_table",
    "main",
    "molecule_sketch",
    "parse_molecules",
    "render",
    "spectrum_compare",
    "verify_manifest",
]
