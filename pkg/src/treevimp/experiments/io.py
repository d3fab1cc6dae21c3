"""CSV ingestion and report output."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from ..tree import Dataset

MISSING_TOKENS = {"", "NA", "na", "NaN", "nan"}


class DataError(ValueError):
    """Bad or unreadable input data."""


def load_csv(path: Union[str, Path, io.TextIOBase], response: str, missing_policy: str = "drop",
             columns: Optional[Sequence[str]] = None) -> tuple[Dataset, int]:
    """Read a headed CSV into a :class:`Dataset`.

    Covariates are ``columns`` (default: every column but the response).
    Empty cells and ``NA`` are missing; with ``missing_policy="drop"`` such
    rows are removed (complete cases), with ``"error"`` they raise.
    Returns the dataset and the number of dropped rows.
    """
    if missing_policy not in ("drop", "error"):
        raise ValueError(f"unknown missing policy {missing_policy!r}")
    if isinstance(path, (str, Path)):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(path))
    if not rows:
        raise DataError("empty file: no header row")
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise DataError(f"response column {response!r} not found; columns are {header}")
    covars = [h for h in header if h != response] if columns is None else list(columns)
    for c in covars:
        if c not in header:
            raise DataError(f"column {c!r} not found")
    wanted = [header.index(response)] + [header.index(c) for c in covars]

    parsed, dropped = [], 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        vals, missing = [], False
        for j in wanted:
            cell = row[j].strip()
            if cell in MISSING_TOKENS:
                if missing_policy == "error":
                    raise DataError(f"line {lineno}, column {header[j]!r}: missing value")
                missing = True
                vals.append(np.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(f"line {lineno}, column {header[j]!r}: cannot parse {cell!r}") from None
        if missing:
            dropped += 1
            continue
        parsed.append(vals)
    arr = np.asarray(parsed, dtype=np.float64).reshape(-1, len(wanted))
    return Dataset(arr[:, 1:], arr[:, 0], covars, response), dropped


def airquality_path():
    return resources.files("treevimp") / "data" / "airquality.csv"


def load_airquality() -> tuple[Dataset, int]:
    """The 1973 New York air quality data, complete cases only (111 of 153 rows)."""
    with resources.as_file(airquality_path()) as p:
        return load_csv(p, "Ozone", "drop")


@dataclass(frozen=True)
class AssociationRow:
    label: str
    paired: float
    additive: float
    association: float
    standardized: float


@dataclass
class AssociationTable:
    rows: list[AssociationRow]
    reference_mse: float
    replicates: int
    seed: int
    singles: dict[str, float] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "AssociationTable":
        obj = dict(obj)
        obj["rows"] = [AssociationRow(**r) for r in obj["rows"]]
        return cls(**obj)

    def row(self, label: str) -> AssociationRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


CSV_HEADER = "pair,paired,additive,association,assoc_per_mse"


def format_csv(table: AssociationTable) -> str:
    lines = [CSV_HEADER]
    for r in table.rows:
        lines.append(f"{r.label},{r.paired:.6f},{r.additive:.6f},{r.association:.6f},{r.standardized:.6f}")
    return "\n".join(lines) + "\n"


def emit_report(table: AssociationTable, fmt: str = "csv", destination=None) -> str:
    """Render ``table`` as CSV or JSON; write it when ``destination`` is a path or file.

    Returns the rendered text.
    """
    if fmt == "csv":
        text = format_csv(table)
    elif fmt == "json":
        text = json.dumps(table.to_dict(), indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if destination is None:
        return text
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        try:
            Path(destination).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {destination}: {exc}") from exc
    return text
