"""Aligned (context, predictors, outcome) data and strict CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError


def fmt(value: float) -> str:
    """17 significant digits: lossless float round-trip through text."""
    return format(float(value), ".17g")


@dataclass
class Dataset:
    C: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    context_names: tuple[str, ...] = ()
    predictor_names: tuple[str, ...] = ()
    outcome_name: str = "y"
    ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        if self.C.ndim == 1:
            self.C = self.C[:, None]
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        n = self.Y.size
        if self.C.shape[0] != n or self.X.shape[0] != n:
            raise DataError(f"row counts differ: C {self.C.shape[0]}, X {self.X.shape[0]}, Y {n}")
        if not self.context_names:
            self.context_names = tuple(f"c{j}" for j in range(self.C.shape[1]))
        if not self.predictor_names:
            self.predictor_names = tuple(f"x{j}" for j in range(self.X.shape[1]))
        self.context_names = tuple(self.context_names)
        self.predictor_names = tuple(self.predictor_names)
        if len(self.context_names) != self.C.shape[1] or len(self.predictor_names) != self.X.shape[1]:
            raise DataError("column names do not match matrix widths")
        if self.ids is None:
            self.ids = np.arange(n)
        self.ids = np.asarray(self.ids)
        for name, arr in (("context", self.C), ("predictors", self.X), ("outcome", self.Y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def m(self) -> int:
        return self.C.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.C[idx], self.X[idx], self.Y[idx], self.context_names,
                       self.predictor_names, self.outcome_name, self.ids[idx])

    def with_context(self, C: np.ndarray, names: Sequence[str]) -> "Dataset":
        return Dataset(C, self.X, self.Y, tuple(names), self.predictor_names,
                       self.outcome_name, self.ids)


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Header plus raw string rows; every row must match the header width."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            rows.append(row)
    return header, rows


def numeric_columns(path, header: list[str], rows: list[list[str]], names: Sequence[str]) -> np.ndarray:
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: missing declared column(s) {missing}")
    out = np.empty((len(rows), len(names)))
    for j, name in enumerate(names):
        col = header.index(name)
        for i, row in enumerate(rows):
            cell = row[col].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i + 2}, column {name!r}: non-numeric value {cell!r}") from None
            if not np.isfinite(value):
                raise DataError(f"{path}: row {i + 2}, column {name!r}: non-finite value {cell!r}")
            out[i, j] = value
    return out


def load_csv(path, context: Sequence[str], predictors: Sequence[str], outcome: str | None,
             id_column: str | None = "id") -> Dataset:
    """Load a combined CSV with declared column roles.

    With ``outcome=None`` the outcome column is filled with zeros (prediction input).
    """
    header, rows = read_table(path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    C = numeric_columns(path, header, rows, context)
    X = numeric_columns(path, header, rows, predictors)
    Y = numeric_columns(path, header, rows, [outcome])[:, 0] if outcome else np.zeros(len(rows))
    ids = None
    if id_column and id_column in header:
        col = header.index(id_column)
        ids = np.array([r[col].strip() for r in rows], dtype=object)
    return Dataset(C, X, Y, tuple(context), tuple(predictors), outcome or "y", ids)


def load_three(context_csv, predictor_csv, outcome_csv) -> Dataset:
    """(C, X, Y) from three aligned files; every column of each file is used."""
    parts = []
    for path in (context_csv, predictor_csv, outcome_csv):
        header, rows = read_table(path)
        parts.append((header, numeric_columns(path, header, rows, header)))
    (hc, C), (hx, X), (hy, Y) = parts
    if Y.shape[1] != 1:
        raise DataError(f"{outcome_csv}: expected exactly one outcome column, found {Y.shape[1]}")
    if not C.shape[0] == X.shape[0] == Y.shape[0]:
        raise DataError(f"row counts differ: context {C.shape[0]}, predictors {X.shape[0]}, outcome {Y.shape[0]}")
    return Dataset(C, X, Y[:, 0], tuple(hc), tuple(hx), hy[0])


def write_csv(path, header: Sequence[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def save_dataset(path, data: Dataset) -> None:
    header = ["id", *data.context_names, *data.predictor_names, data.outcome_name]
    rows = ([data.ids[i], *data.C[i].tolist(), *data.X[i].tolist(), float(data.Y[i])]
            for i in range(data.n))
    write_csv(path, header, rows)
