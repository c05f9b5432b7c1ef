"""Tabular data: synthetic generation, CSV round-trip and the development/explanation split."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

# Clinical variable names used for synthetic columns (vital signs and labs of an ICU cohort).
CLINICAL_NAMES = (
    "temperature",
    "heart rate",
    "age",
    "respiration rate",
    "systolic blood pressure",
    "diastolic blood pressure",
    "mean arterial pressure",
    "SpO2",
    "white blood cell count",
    "platelet count",
    "anion gap",
    "glucose",
    "sodium",
    "potassium",
    "lactate",
    "bicarbonate",
    "blood urea nitrogen",
    "creatinine",
    "hemoglobin",
    "chloride",
    "hematocrit",
)

# Sparse ground truth for the synthetic labels: alternating sign, decreasing magnitude.
TRUE_COEFFICIENTS = (2.0, -1.5, 1.0, -0.8, 0.5, -0.3)
TARGET_PREVALENCE = 0.1

LABEL_COLUMN = "label"


class DataError(ValueError):
    """Raised for malformed tables or CSV files."""


@dataclass
class DataTable:
    column_names: list[str]
    rows: np.ndarray
    labels: np.ndarray | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.column_names = [str(c) for c in self.column_names]
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DataError(f"rows must be a 2-D matrix, got shape {self.rows.shape}")
        if self.rows.shape[1] != len(self.column_names):
            raise DataError(
                f"{len(self.column_names)} column names for {self.rows.shape[1]} columns"
            )
        if any(not c for c in self.column_names):
            raise DataError("column names must be non-empty")
        if len(set(self.column_names)) != len(self.column_names):
            dupes = sorted({c for c in self.column_names if self.column_names.count(c) > 1})
            raise DataError(f"duplicate column names: {dupes}")
        if LABEL_COLUMN in self.column_names:
            raise DataError(f"'{LABEL_COLUMN}' is reserved for the label column")
        if not np.all(np.isfinite(self.rows)):
            raise DataError("all entries must be finite")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.rows.shape[0],):
                raise DataError(f"expected {self.rows.shape[0]} labels, got shape {labels.shape}")
            if not np.all((labels == 0) | (labels == 1)):
                raise DataError("labels must be 0 or 1")
            self.labels = labels.astype(np.int64)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_vars(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def take(self, indices) -> DataTable:
        """Sub-table of the given row indices, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return DataTable(list(self.column_names), self.rows[idx], labels)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def default_column_names(n_vars: int) -> list[str]:
    names = list(CLINICAL_NAMES[:n_vars])
    names += [f"var_{j}" for j in range(len(names), n_vars)]
    return names


def _prevalence(intercept: float, scale: float) -> float:
    # E[sigmoid(intercept + scale * Z)], Z ~ N(0, 1), by Gauss-Hermite quadrature.
    nodes, weights = np.polynomial.hermite_e.hermegauss(120)
    z = intercept + scale * nodes
    return float(np.sum(weights / (1.0 + np.exp(-z))) / math.sqrt(2.0 * math.pi))


def synthetic_intercept(coefficients) -> float:
    """Intercept giving the target positive rate under standard-normal features."""
    scale = float(np.sqrt(np.sum(np.square(coefficients))))
    if scale == 0.0:
        return math.log(TARGET_PREVALENCE / (1.0 - TARGET_PREVALENCE))
    return float(brentq(lambda b: _prevalence(b, scale) - TARGET_PREVALENCE, -50.0, 50.0, xtol=1e-14))


def generate_synthetic(n_rows: int, n_vars: int, seed: int) -> DataTable:
    """Standard-normal features with labels from a sparse logistic model.

    The first ``min(6, n_vars)`` variables carry the coefficients in
    ``TRUE_COEFFICIENTS``; the rest are pure noise. The intercept is set so the
    expected prevalence is ``TARGET_PREVALENCE``. The coefficient vector, the
    intercept and the seed are returned in ``table.metadata``.
    """
    if n_rows < 1 or n_vars < 1:
        raise ValueError(f"n_rows and n_vars must be >= 1, got {n_rows}, {n_vars}")
    coef = np.zeros(n_vars)
    k = min(len(TRUE_COEFFICIENTS), n_vars)
    coef[:k] = TRUE_COEFFICIENTS[:k]
    intercept = synthetic_intercept(coef)

    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n_rows, n_vars))
    prob = 1.0 / (1.0 + np.exp(-(rows @ coef + intercept)))
    labels = (rng.random(n_rows) < prob).astype(np.int64)
    meta = {
        "generator": "sparse-logistic",
        "seed": int(seed),
        "n_rows": int(n_rows),
        "n_vars": int(n_vars),
        "coefficients": coef.tolist(),
        "intercept": intercept,
    }
    return DataTable(default_column_names(n_vars), rows, labels, metadata=meta)


def split(table: DataTable, spec: SplitSpec) -> tuple[DataTable, DataTable]:
    """Random disjoint partition into (development, explanation) tables.

    The development part has ``floor(train_fraction * N + 0.5)`` rows. Rows keep
    their original relative order within each part.
    """
    n = table.n_rows
    if n == 0:
        raise DataError("cannot split an empty table")
    n_train = int(math.floor(spec.train_fraction * n + 0.5))
    perm = np.random.default_rng(spec.seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    explain_idx = np.sort(perm[n_train:])
    return table.take(train_idx), table.take(explain_idx)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(table: DataTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(table.column_names)
        if table.labels is not None:
            header.append(LABEL_COLUMN)
        writer.writerow(header)
        for i, row in enumerate(table.rows):
            cells = [_fmt(v) for v in row]
            if table.labels is not None:
                cells.append(str(int(table.labels[i])))
            writer.writerow(cells)


def read_csv(path) -> DataTable:
    """Read a numeric CSV with a header row; a column named ``label`` holds 0/1 labels.

    Error positions are 1-based: data row 1 is the first line after the header.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        if not header or any(not h for h in header):
            raise DataError(f"{path}: malformed header {header!r}")
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise DataError(f"{path}: duplicate column names {dupes}")
        label_pos = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None

        values: list[list[float]] = []
        for r, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"{path}: row {r} has {len(cells)} cells, header has {len(header)}"
                )
            parsed = []
            for c, cell in enumerate(cells, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric cell {cell!r} at (row {r}, column {c})") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite cell {cell!r} at (row {r}, column {c})")
                parsed.append(v)
            values.append(parsed)

    mat = np.array(values, dtype=np.float64).reshape(len(values), len(header))
    if label_pos is None:
        return DataTable(header, mat)
    labels = mat[:, label_pos]
    if not np.all((labels == 0) | (labels == 1)):
        bad = int(np.flatnonzero((labels != 0) & (labels != 1))[0]) + 1
        raise DataError(f"{path}: label at row {bad} is not 0 or 1")
    names = header[:label_pos] + header[label_pos + 1:]
    return DataTable(names, np.delete(mat, label_pos, axis=1), labels.astype(np.int64))


def metadata_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".meta.json")


def write_metadata(table: DataTable, csv_path) -> Path:
    """Write the generator metadata next to ``csv_path`` and return the sidecar path."""
    out = metadata_path(csv_path)
    out.write_text(json.dumps(table.metadata, indent=2, sort_keys=True) + "\n")
    return out
