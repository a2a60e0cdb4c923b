"""Rendering front end.

Turns a verified result directory into PNG and SVG files for one named
figure.  Output is deterministic: the same inputs produce byte-identical
files, so renders can be diffed and cached.  The result directory is
only ever read.
"""

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import matplotlib

from .figures import FIGURES
from .io import ResultsError

__all__ = ["FigureRequest", "render", "main"]

_FORMATS = ("png", "svg")


@dataclass(frozen=True)
class FigureRequest:
    """What to draw, from where, and where to put it."""

    results_dir: Path
    figure: str
    out_dir: Path
    formats: Tuple[str, ...] = _FORMATS

    def __post_init__(self):
        if self.figure not in FIGURES:
            raise ValueError(
                f"unknown figure {self.figure!r}, choose from {sorted(FIGURES)}"
            )
        for fmt in self.formats:
            if fmt not in _FORMATS:
                raise ValueError(f"unsupported format {fmt!r}")


def render(req: FigureRequest) -> Tuple[list, dict]:
    """Build one figure and write it in every requested format.

    Returns (written paths, figure info).  Nothing is written until the
    source directory has passed manifest verification and the figure has
    been built, so a failed render leaves no partial output.
    """
    fig, info = FIGURES[req.figure](req.results_dir)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    # pin the svg id salt and drop timestamps so reruns are byte-identical
    with matplotlib.rc_context({"svg.hashsalt": "wavekin-plots"}):
        for fmt in req.formats:
            path = out_dir / f"{req.figure}.{fmt}"
            fig.savefig(path, format=fmt, metadata={"Date": None})
            written.append(path)
    return written, info


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render a figure from a wavekin result directory.",
    )
    parser.add_argument("results_dir", help="directory holding manifest.json and data files")
    parser.add_argument(
        "--figure",
        required=True,
        choices=sorted(FIGURES),
        help="which figure to draw",
    )
    parser.add_argument(
        "--out",
        required=True,
        help="directory the PNG and SVG files are written into",
    )
    args = parser.parse_args(argv)
    req = FigureRequest(Path(args.results_dir), args.figure, Path(args.out))
    try:
        written, _ = render(req)
    except ResultsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
