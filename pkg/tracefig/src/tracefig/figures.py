"""Batch rendering of convergence-trace CSVs into publication-style figures.

Input files are the per-round trace CSVs written by the simulator: a
header row starting with ``t,F,excess,grad_norm,alpha,B,elapsed_s``,
optionally followed by extra metric columns such as ``nmse`` or
``subspace_dist``, then one row per outer iteration.  This tool reads
columns by header name and nothing else, so it stays decoupled from the
code that produced the files and works on any CSV exposing the same
columns.

Typical use renders excess risk on a log scale with one curve per local
update count::

    tracefig plot --glob "out/cpesph_K*_seed0.csv" --y excess --logy --out fig.png

Legend labels are captured from each file name by a configurable regex
(default: the ``K{count}_seed{seed}`` convention of the trace writer).
"""

from __future__ import annotations

import argparse
import csv
import re
import sys
from dataclasses import dataclass
from glob import glob as _expand_glob
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

__all__ = [
    "DEFAULT_LABEL_PATTERN",
    "DataFormatError",
    "ParameterError",
    "PlotSpec",
    "Y_FIELDS",
    "build_figure",
    "main",
    "plot_traces",
    "read_trace_table",
]

# Columns a trace plot may put on the y axis.  The first three are core
# trace columns; the last two are extra metrics the multitask runs append.
Y_FIELDS = ("excess", "F", "grad_norm", "nmse", "subspace_dist")

# File names like cpesph_K4_seed17.csv carry the run's K and seed.
DEFAULT_LABEL_PATTERN = r"K(?P<K>\d+)_seed(?P<seed>\d+)"

_Y_AXIS_TEXT = {
    "excess": "excess risk",
    "F": "objective value",
    "grad_norm": "gradient norm",
    "nmse": "NMSE",
    "subspace_dist": "subspace distance",
}


class ParameterError(ValueError):
    """A plot request is malformed: bad y field, bad pattern, empty glob."""


class DataFormatError(ValueError):
    """An input CSV does not conform to the trace schema."""


@dataclass(frozen=True)
class PlotSpec:
    """What to render: which files, which column, where the image goes.

    ``glob`` selects the input CSVs; it must match at least one file by
    the time the plot is drawn.  ``label_pattern`` is a regex searched
    against each file name; its captured groups become the legend label,
    and files it does not match fall back to their bare stem.
    """

    glob: str
    y: str = "excess"
    logy: bool = False
    out: str = "trace.png"
    label_pattern: str = DEFAULT_LABEL_PATTERN

    def __post_init__(self):
        if not isinstance(self.glob, str) or not self.glob:
            raise ParameterError("glob must be a non-empty pattern string")
        if self.y not in Y_FIELDS:
            choices = ", ".join(Y_FIELDS)
            raise ParameterError(f"y must be one of {choices}, got {self.y!r}")
        if not isinstance(self.logy, bool):
            raise ParameterError("logy must be a bool")
        if not str(self.out):
            raise ParameterError("out must be a non-empty path")
        try:
            re.compile(self.label_pattern)
        except re.error as exc:
            raise ParameterError(f"label_pattern is not a valid regex: {exc}") from None

    def matching_files(self) -> list[Path]:
        """Expand the glob, digit runs in names compared as numbers."""
        paths = [Path(p) for p in _expand_glob(self.glob)]
        paths.sort(key=lambda p: _natural_key(p.name))
        return paths


def _natural_key(name: str):
    # Splitting on digit runs keeps str/int positions aligned between names.
    parts = re.split(r"(\d+)", name)
    return tuple(int(part) if part.isdigit() else part for part in parts)


def read_trace_table(path, columns) -> dict[str, list[float]]:
    """Read the named columns from one trace CSV as float lists.

    Columns are located by header name so extra columns and their order
    do not matter.  Raises :class:`DataFormatError` naming the offending
    column when the header lacks one or a cell fails to parse.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a trace header") from None
        index = {}
        for name in columns:
            if name not in header:
                raise DataFormatError(
                    f"{path}: column '{name}' not found in header {','.join(header)}"
                )
            index[name] = header.index(name)
        table: dict[str, list[float]] = {name: [] for name in columns}
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {row_num} has {len(row)} cells, header has {len(header)}"
                )
            for name, i in index.items():
                try:
                    table[name].append(float(row[i]))
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {row_num}, column '{name}': "
                        f"cannot parse {row[i]!r} as a number"
                    ) from None
    return table


def _label_for(path: Path, pattern: re.Pattern) -> str:
    match = pattern.search(path.name)
    if match is None:
        return path.stem
    named = match.groupdict()
    if named:
        return " ".join(f"{name}={value}" for name, value in named.items())
    if match.groups():
        return " ".join(str(group) for group in match.groups())
    return path.stem


def build_figure(spec: PlotSpec) -> Figure:
    """Render the spec into a matplotlib Figure without touching disk.

    Kept separate from :func:`plot_traces` so tests and callers can
    inspect the structure (lines, legend, scales) before any image is
    written.  Raises :class:`ParameterError` when the glob matches
    nothing and :class:`DataFormatError` when a matched CSV is off
    schema.
    """
    files = spec.matching_files()
    if not files:
        raise ParameterError(f"glob {spec.glob!r} matched no files")
    pattern = re.compile(spec.label_pattern)
    fig = Figure(figsize=(6.4, 4.4))
    ax = fig.add_subplot()
    for path in files:
        table = read_trace_table(path, ("t", spec.y))
        ax.plot(table["t"], table[spec.y], linewidth=1.8, label=_label_for(path, pattern))
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel("outer iteration t")
    ax.set_ylabel(_Y_AXIS_TEXT[spec.y])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(frameon=False)
    return fig


def plot_traces(spec: PlotSpec) -> Path:
    """Write the figure for ``spec`` and return the output path.

    One line per matched file, in natural filename order.  Inputs are
    only ever opened for reading.  The format follows the output
    extension (png, pdf, svg, ...); timestamps the vector backends would
    normally embed are dropped so the bytes depend only on the inputs.
    """
    fig = build_figure(spec)
    out = Path(spec.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_args = {"dpi": 150}
    suffix = out.suffix.lower()
    if suffix in {".pdf", ".ps", ".eps"}:
        save_args["metadata"] = {"CreationDate": None}
    elif suffix == ".svg":
        save_args["metadata"] = {"Date": None}
    # fixed hash salt keeps SVG element ids reproducible across processes
    with matplotlib.rc_context({"svg.hashsalt": "tracefig"}):
        fig.savefig(out, **save_args)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracefig",
        description="Render convergence-trace CSVs into a figure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="draw one figure from the CSVs a glob matches")
    plot.add_argument("--glob", required=True, help="pattern selecting the input trace CSVs")
    plot.add_argument("--y", default="excess", choices=Y_FIELDS, help="trace column for the y axis")
    plot.add_argument("--logy", action="store_true", help="log scale on the y axis")
    plot.add_argument("--out", required=True, help="image file to write; extension picks the format")
    plot.add_argument(
        "--label-pattern",
        default=DEFAULT_LABEL_PATTERN,
        help="regex searched in each file name; captured groups become the legend label",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(
            glob=args.glob,
            y=args.y,
            logy=args.logy,
            out=args.out,
            label_pattern=args.label_pattern,
        )
        out = plot_traces(spec)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0
