"""Readers for experiment result directories.

Every figure starts from a directory written by the ``wavekin`` command
line tool.  Such a directory carries a ``manifest.json`` with a checksum
for each data file; nothing here is trusted until the manifest verifies.
Loaders are strict about CSV headers and cell types so that a figure can
never be built from a column it misunderstands.  All reads are
non-destructive: the result directory is never written to.
"""

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "ResultsError",
    "SchemaError",
    "verify_manifest",
    "load_table",
    "load_summary",
    "load_compare_rungs",
    "load_census_exact",
    "load_census_window",
    "MoleculeSketchData",
    "parse_molecules",
    "load_molecules",
]


class ResultsError(RuntimeError):
    """A result directory is missing, incomplete, or corrupted."""


class SchemaError(ResultsError):
    """A data file does not match its documented layout.

    The message always names the offending file and, when the problem is
    a column, the column itself.
    """


_MANIFEST_KEYS = (
    "experiment",
    "version",
    "wall_clock_seconds",
    "config_text",
    "config",
    "files",
)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def verify_manifest(results_dir) -> dict:
    """Check a result directory against its manifest and return the manifest.

    Raises ResultsError when the directory or manifest is absent, when a
    listed file is missing or fails its checksum, or when the directory
    contains a data file the manifest does not list.
    """
    root = Path(results_dir)
    if not root.is_dir():
        raise ResultsError(f"result directory not found: {root}")
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ResultsError(f"no manifest.json in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ResultsError(f"manifest.json in {root} is not valid JSON: {exc}")
    for key in _MANIFEST_KEYS:
        if key not in manifest:
            raise ResultsError(f"manifest.json in {root} lacks the '{key}' field")
    listed = manifest["files"]
    if not isinstance(listed, dict):
        raise ResultsError(f"manifest.json in {root}: 'files' must map paths to digests")
    for rel, digest in sorted(listed.items()):
        path = root / rel
        if not path.is_file():
            raise ResultsError(f"file listed in manifest is missing: {rel}")
        actual = _sha256(path)
        if actual != digest:
            raise ResultsError(
                f"checksum mismatch for {rel}: manifest says {digest[:12]}..., "
                f"file hashes to {actual[:12]}..."
            )
    on_disk = {
        str(p.relative_to(root))
        for p in root.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    }
    unlisted = sorted(on_disk - set(listed))
    if unlisted:
        raise ResultsError(
            f"files present but not covered by the manifest: {', '.join(unlisted)}"
        )
    return manifest


# column type tags for load_table
FLOAT = "float"
INT = "int"
STR = "str"


def load_table(path, columns: Sequence[Tuple[str, str]]) -> Dict[str, np.ndarray]:
    """Read a CSV file whose header must match ``columns`` exactly.

    ``columns`` is a sequence of (name, type) pairs with type one of
    FLOAT, INT, STR.  Returns a dict of numpy arrays keyed by column
    name.  Any header or cell that deviates raises SchemaError naming
    the file and column.
    """
    path = Path(path)
    if not path.is_file():
        raise ResultsError(f"expected data file is missing: {path}")
    expected = [name for name, _ in columns]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path.name}: file is empty, expected header {expected}")
        if header != expected:
            missing = [c for c in expected if c not in header]
            extra = [c for c in header if c not in expected]
            detail = []
            if missing:
                detail.append("missing column(s) " + ", ".join(repr(c) for c in missing))
            if extra:
                detail.append("unexpected column(s) " + ", ".join(repr(c) for c in extra))
            if not detail:
                detail.append(f"column order {header} != {expected}")
            raise SchemaError(f"{path.name}: {'; '.join(detail)}")
        rows = list(reader)
    out: Dict[str, np.ndarray] = {}
    for j, (name, kind) in enumerate(columns):
        cells = []
        for i, row in enumerate(rows):
            if len(row) != len(expected):
                raise SchemaError(
                    f"{path.name}: row {i + 2} has {len(row)} cells, expected {len(expected)}"
                )
            cells.append(row[j])
        if kind == STR:
            out[name] = np.array(cells, dtype=object)
            continue
        caster = float if kind == FLOAT else int
        values = []
        for i, cell in enumerate(cells):
            try:
                values.append(caster(cell))
            except ValueError:
                raise SchemaError(
                    f"{path.name}: column '{name}' row {i + 2}: "
                    f"cannot parse {cell!r} as {kind}"
                )
        out[name] = np.array(values, dtype=np.float64 if kind == FLOAT else np.int64)
    return out


SUMMARY_COLUMNS = [
    ("L", FLOAT),
    ("epsilon", FLOAT),
    ("n_modes", INT),
    ("sup_defect", FLOAT),
    ("wke_peak", FLOAT),
    ("rel_defect", FLOAT),
    ("max_sigma", FLOAT),
    ("flag", STR),
]

CENSUS_EXACT_COLUMNS = [
    ("family", STR),
    ("d", INT),
    ("L", FLOAT),
    ("count", INT),
]

CENSUS_WINDOW_COLUMNS = [
    ("family", STR),
    ("d", INT),
    ("L", FLOAT),
    ("t", FLOAT),
    ("delta", FLOAT),
    ("quasi_count", INT),
    ("exact_count", INT),
    ("volume_prediction", FLOAT),
]


def _axis_names(prefix: str, d: int) -> List[str]:
    suffixes = [("xyz"[j] if j < 3 else str(j)) for j in range(d)]
    return [f"{prefix}_{s}" for s in suffixes]


def _compare_columns(d: int) -> List[Tuple[str, str]]:
    cols: List[Tuple[str, str]] = []
    for name in _axis_names("m", d):
        cols.append((name, FLOAT))
    for name in _axis_names("k", d):
        cols.append((name, FLOAT))
    cols += [
        ("mc_mean", FLOAT),
        ("mc_stderr", FLOAT),
        ("wke_n", FLOAT),
        ("defect", FLOAT),
    ]
    return cols


def load_summary(results_dir) -> Dict[str, np.ndarray]:
    """Load summary.csv from a spectrum comparison run."""
    return load_table(Path(results_dir) / "summary.csv", SUMMARY_COLUMNS)


def _infer_dimension(path: Path) -> int:
    # the number of m_* columns before the k_* block fixes d
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    d = 0
    for name in header:
        if name.startswith("m_"):
            d += 1
        else:
            break
    if d == 0:
        raise SchemaError(f"{path.name}: header does not start with m_* coordinate columns")
    return d


def load_compare_rungs(results_dir) -> List[Tuple[float, Dict[str, np.ndarray]]]:
    """Load every per-size comparison table, sorted by box size.

    Returns a list of (L, table) pairs where each table has columns
    m_*, k_*, mc_mean, mc_stderr, wke_n, defect.
    """
    root = Path(results_dir)
    summary = load_summary(root)
    rungs = []
    for L in summary["L"]:
        path = root / f"compare_L{float(L):g}.csv"
        d = _infer_dimension(path)
        rungs.append((float(L), load_table(path, _compare_columns(d))))
    rungs.sort(key=lambda pair: pair[0])
    if not rungs:
        raise SchemaError("summary.csv: no rows, nothing to plot")
    return rungs


def load_census_exact(results_dir) -> Dict[str, np.ndarray]:
    return load_table(Path(results_dir) / "census_exact.csv", CENSUS_EXACT_COLUMNS)


def load_census_window(results_dir) -> Dict[str, np.ndarray]:
    return load_table(Path(results_dir) / "census_window.csv", CENSUS_WINDOW_COLUMNS)


@dataclass(frozen=True)
class MoleculeSketchData:
    """One parsed molecule block: atoms and bonds ready for drawing."""

    index: int
    order: int
    atoms: Tuple[str, ...]
    # (atom_a, atom_b, kind, direction)
    bonds: Tuple[Tuple[str, str, str, int], ...]


def parse_molecules(text: str) -> List[MoleculeSketchData]:
    """Parse the molecules.txt block format into sketch data."""
    molecules: List[MoleculeSketchData] = []
    index = order = None
    atoms: List[str] = []
    bonds: List[Tuple[str, str, str, int]] = []
    declared: Optional[int] = None

    def flush():
        nonlocal index, order, atoms, bonds, declared
        if index is None:
            return
        if declared is not None and declared != len(atoms):
            raise SchemaError(
                f"molecules.txt: molecule {index} declares {declared} atoms "
                f"but lists {len(atoms)}"
            )
        molecules.append(
            MoleculeSketchData(index, order, tuple(atoms), tuple(bonds))
        )
        index = order = declared = None
        atoms, bonds = [], []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# molecule"):
            flush()
            parts = line.split()
            # "# molecule {i} order {n}"
            try:
                index = int(parts[2])
                order = int(parts[4])
            except (IndexError, ValueError):
                raise SchemaError(f"molecules.txt line {lineno}: bad molecule header {line!r}")
            continue
        if index is None:
            raise SchemaError(f"molecules.txt line {lineno}: data before any molecule header")
        if line.startswith("molecule "):
            try:
                declared = int(line.split("atoms=")[1])
            except (IndexError, ValueError):
                raise SchemaError(f"molecules.txt line {lineno}: bad atom count {line!r}")
        elif line.startswith("atom "):
            atoms.append(line.split(None, 1)[1])
        elif line.startswith("bond "):
            parts = line.split()
            try:
                a, b = parts[1], parts[2]
                kind = next(p for p in parts if p.startswith("kind=")).split("=", 1)[1]
                direction = int(
                    next(p for p in parts if p.startswith("dir=")).split("=", 1)[1]
                )
            except (IndexError, StopIteration, ValueError):
                raise SchemaError(f"molecules.txt line {lineno}: bad bond line {line!r}")
            bonds.append((a, b, kind, direction))
        else:
            raise SchemaError(f"molecules.txt line {lineno}: unrecognized line {line!r}")
    flush()
    if not molecules:
        raise SchemaError("molecules.txt: no molecule blocks found")
    return molecules


def load_molecules(results_dir) -> List[MoleculeSketchData]:
    path = Path(results_dir) / "molecules.txt"
    if not path.is_file():
        raise ResultsError(f"expected data file is missing: {path}")
    return parse_molecules(path.read_text())
