"""Result tables and their CSV / Markdown renderings.

A table is a flat list of cells.  Each cell is addressed by a row key
``(defense, denoiser, attack)`` and a column name, and holds one number
rounded to one decimal place, so a CSV round trip is lossless.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import MedRDFError, ParseError

CSV_COLUMNS = ("table", "defense", "denoiser", "attack", "column", "value")
RM_CELLS = ("C&R", "C&~R", "~C&~R", "~C&R")


@dataclass(frozen=True)
class Cell:
    defense: str
    denoiser: str
    attack: str
    column: str
    value: float

    @property
    def row(self) -> tuple:
        return (self.defense, self.denoiser, self.attack)


@dataclass
class ReportTable:
    name: str
    cells: list = field(default_factory=list)

    def add(self, defense: str, denoiser: str, attack: str, column: str, value: float) -> None:
        self.cells.append(Cell(defense, denoiser, attack, column, round(float(value), 1)))

    def rows(self) -> list:
        return list(dict.fromkeys(c.row for c in self.cells))

    def columns(self) -> list:
        return list(dict.fromkeys(c.column for c in self.cells))

    def get(self, defense: str, denoiser: str, attack: str, column: str) -> float:
        for c in self.cells:
            if c.row == (defense, denoiser, attack) and c.column == column:
                return c.value
        raise KeyError((defense, denoiser, attack, column))

    def grid(self) -> dict:
        """``{row key: {column: value}}`` in insertion order."""
        out = {row: {} for row in self.rows()}
        for c in self.cells:
            out[c.row][c.column] = c.value
        return out

    def __len__(self):
        return len(self.cells)


def percent(numerator, denominator) -> float:
    return 100.0 * numerator / denominator if denominator else 0.0


def to_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for c in table.cells:
        writer.writerow([table.name, c.defense, c.denoiser, c.attack, c.column, f"{c.value:.1f}"])
    return buf.getvalue()


def to_markdown(table: ReportTable) -> str:
    columns = table.columns()
    lines = [f"### {table.name}", "",
             "| defense | denoiser | attack | " + " | ".join(columns) + " |",
             "|" + "---|" * (3 + len(columns))]
    for row, values in table.grid().items():
        cells = [f"{values[c]:.1f}" if c in values else "" for c in columns]
        lines.append("| " + " | ".join(list(row) + cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(table: ReportTable, out_dir, formats=("csv", "md"), stem=None) -> list:
    """Write *table* under *out_dir*; return the written paths."""
    out_dir = Path(out_dir)
    stem = stem or table.name
    render = {"csv": to_csv, "md": to_markdown}
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            if fmt not in render:
                raise MedRDFError(f"unknown report format {fmt!r}")
            path = out_dir / f"{stem}.{fmt}"
            with open(path, "w", newline="") as fh:
                fh.write(render[fmt](table))
            written.append(path)
    except OSError as exc:
        raise MedRDFError(f"cannot write report to {exc.filename or out_dir}: {exc.strerror}") from exc
    return written


def read_csv_report(path) -> ReportTable:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ParseError(f"unexpected report header {header}", path, 0)
        table = None
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_COLUMNS):
                raise ParseError(f"line {lineno} has {len(rec)} fields", path)
            name, defense, denoiser, attack, column, value = rec
            if table is None:
                table = ReportTable(name)
            try:
                table.cells.append(Cell(defense, denoiser, attack, column, float(value)))
            except ValueError:
                raise ParseError(f"non-numeric value on line {lineno}", path) from None
    return table if table is not None else ReportTable(path.stem)
