"""Embedded benchmark conjunctions (22 encounters at closest approach).

Angles in the CSV are radians even though the original column headers
name degrees: values such as 5.64 for a node or 6.01 for a perigee
argument only make sense as radians, and with that reading the element
sets reproduce the tabulated miss distances.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .dynamics import KeplerElements

HEADER = (
    "id", "aA", "eA", "iA", "raanA", "argpA", "EA",
    "aB", "eB", "iB", "raanB", "argpB", "EB", "dr_m", "dv_mps",
)
N_ROWS = 22


class DatasetError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class DatasetRow:
    id: int
    elements_a: KeplerElements
    elements_b: KeplerElements
    miss_m: float
    speed_mps: float
    raw: tuple[str, ...] = ()


def _parse(text: str, source: str, expect_rows: int | None) -> list[DatasetRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError(f"{source}: empty file") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise DatasetError(f"{source}: unexpected header {header}")
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(HEADER):
            raise DatasetError(f"{source}:{lineno}: expected {len(HEADER)} fields, got {len(fields)}")
        try:
            vals = [float(f) for f in fields[1:]]
            rid = int(fields[0])
            el_a = KeplerElements(*vals[0:6])
            el_b = KeplerElements(*vals[6:12])
        except ValueError as exc:
            raise DatasetError(f"{source}:{lineno}: {exc}") from None
        miss, speed = vals[12], vals[13]
        if not 0.0 < miss <= 1000.0:
            raise DatasetError(f"{source}:{lineno}: miss distance {miss} m outside (0, 1000]")
        rows.append(DatasetRow(rid, el_a, el_b, miss, speed, tuple(f.strip() for f in fields)))
    if expect_rows is not None and len(rows) != expect_rows:
        raise DatasetError(f"{source}: expected {expect_rows} rows, got {len(rows)}")
    ids = [r.id for r in rows]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{source}: duplicate row ids")
    return rows


def embedded_csv_text() -> str:
    return resources.files("conjmoments").joinpath("data/table3.csv").read_text()


def load_dataset(path: str | Path | None = None, expect_rows: int | None = N_ROWS) -> list[DatasetRow]:
    """Load the benchmark conjunctions from ``path`` or the embedded copy."""
    if path is None:
        return _parse(embedded_csv_text(), "table3.csv", expect_rows)
    path = Path(path)
    return _parse(path.read_text(), str(path), expect_rows)


def get_row(row_id: int, rows: list[DatasetRow] | None = None) -> DatasetRow:
    for row in rows if rows is not None else load_dataset():
        if row.id == row_id:
            return row
    raise KeyError(f"no dataset row with id {row_id}")
