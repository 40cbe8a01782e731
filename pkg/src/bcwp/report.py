"""Run reports: key-value summary, CSV tables, CSV fields and plot series.

Files written for prefix ``P``:

``P.summary.txt``
    Header lines, a ``[scalars]`` section and a ``[config]`` echo, all as
    ``key = value`` lines.  Floats use ``repr`` so that repeated runs are
    byte-identical.
``P.<table>.csv``
    One file per table.
``P.field.<name>.csv``
    Grid fields: index columns, coordinate columns, value.
``P.plot.<series>.csv``
    Plot-ready series (see :func:`emit_plot_data`).
``P.timing.txt``
    Wall-clock only; kept out of the summary so the summary is
    deterministic.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__

EXIT_CODES = {"converged": 0, "verified": 0, "classified": 0, "nonexistence-certified": 2,
              "regime-out-of-scope": 3, "failed": 1, "error": 1}


def format_value(v):
    """Deterministic text for a scalar entry."""
    if v is None:
        return "n/a"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True, default=str)
    return str(v)


def _flatten(d, prefix=""):
    for key in d:
        v = d[key]
        path = f"{prefix}{key}"
        if isinstance(v, dict) and v:
            yield from _flatten(v, path + ".")
        else:
            yield path, v


@dataclass
class RunReport:
    command: str
    config: dict
    status: str = "verified"
    scalars: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    wall_clock: float | None = None
    version: str = __version__

    @property
    def exit_code(self):
        return EXIT_CODES.get(self.status, 1)

    def add_table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def add_field(self, name, grid, values):
        self.fields[name] = (grid, np.asarray(values, dtype=float))

    def summary_text(self):
        lines = ["# bcwp run report",
                 f"command = {self.command}",
                 f"version = {self.version}",
                 f"status = {self.status}",
                 f"exit_code = {self.exit_code}",
                 "",
                 "[scalars]"]
        lines += [f"{k} = {format_value(v)}" for k, v in self.scalars.items()]
        lines += ["", "[config]"]
        lines += [f"{k} = {format_value(v)}" for k, v in _flatten(self.config)]
        if self.tables:
            lines += ["", "[tables]"]
            lines += [f"{name} = {len(rows)} rows" for name, (_, rows) in self.tables.items()]
        return "\n".join(lines) + "\n"


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(x) for x in r])
    return buf.getvalue()


def field_rows(grid, values):
    """Rows ``(i_0.., x_0.., value)`` of a grid field in C order."""
    coords = grid.coords()
    idx = np.indices(grid.shape).reshape(grid.dim, -1).T
    vals = np.asarray(values, dtype=float).reshape(-1)
    rows = []
    for ii, v in zip(idx, vals):
        rows.append([int(i) for i in ii] + [float(coords[a][i]) for a, i in enumerate(ii)] + [float(v)])
    header = [f"i{a}" for a in range(grid.dim)] + [f"x{a}" for a in range(grid.dim)] + ["value"]
    return header, rows


def emit_plot_data(report):
    """One CSV text per plottable series.

    Regime series carry ``mu, p, q, varrho`` columns; sweep series carry
    ``lam, success``.  An empty series still gets its header.
    """
    out = {}
    for name, (header, rows) in report.series.items():
        out[name] = csv_text(header, rows)
    return out


def write_report(report, outdir, prefix):
    """Write every file of a report; returns the list of paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def put(name, text):
        path = os.path.join(outdir, f"{prefix}.{name}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(path)

    put("summary.txt", report.summary_text())
    for name, (header, rows) in report.tables.items():
        put(f"{name}.csv", csv_text(header, rows))
    for name, (grid, values) in report.fields.items():
        put(f"field.{name}.csv", csv_text(*field_rows(grid, values)))
    for name, text in emit_plot_data(report).items():
        put(f"plot.{name}.csv", text)
    if report.wall_clock is not None:
        put("timing.txt", f"wall_clock_seconds = {report.wall_clock!r}\n")
    return paths
