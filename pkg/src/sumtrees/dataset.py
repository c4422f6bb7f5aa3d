"""Data model, CSV ingestion, outcome scaling and the synthetic benchmark."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "Schema",
    "ScalingRecord",
    "load_csv",
    "scale_outcome",
    "friedman_like_mean",
    "simulate_friedman_like",
]


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class Dataset:
    """Outcome plus covariates for one fit.

    ``group`` holds integer codes ``0..L-1``; ``group_labels[k]`` is the original
    label of code ``k``.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray | None = None
    group: np.ndarray | None = None
    outcome_kind: str = "continuous"
    x_names: list[str] = field(default_factory=list)
    w_names: list[str] = field(default_factory=list)
    group_labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.y.ndim != 1:
            raise DataError("outcome must be a vector")
        n = self.y.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if self.x.ndim != 2 or self.x.shape[0] != n or self.x.shape[1] < 1:
            raise DataError(f"covariate matrix must be {n} x p with p >= 1, got {self.x.shape}")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.x)):
            raise DataError("missing or non-finite values are not accepted")
        if self.outcome_kind not in ("continuous", "binary"):
            raise DataError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.outcome_kind == "binary":
            bad = self.y[(self.y != 0) & (self.y != 1)]
            if bad.size:
                raise DataError(f"non-binary outcome value {_fmt(bad[0])}")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
            if self.w.ndim == 1:
                self.w = self.w[:, None]
            if self.w.shape[0] != n:
                raise DataError("H covariates must have one row per observation")
            if not np.all(np.isfinite(self.w)):
                raise DataError("missing or non-finite values are not accepted")
        if self.group is not None:
            self.group = np.asarray(self.group)
            if self.group.shape != (n,):
                raise DataError("group vector must have one entry per observation")
            if not np.issubdtype(self.group.dtype, np.integer):
                codes, labels = relabel_groups(self.group)
                self.group, self.group_labels = codes, labels
            elif self.group.size and (self.group.min() < 0):
                raise DataError("group codes must be non-negative")
            if not self.group_labels:
                self.group_labels = [str(k) for k in range(int(self.group.max()) + 1)]
        if not self.x_names:
            self.x_names = [f"x{k + 1}" for k in range(self.x.shape[1])]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_groups(self) -> int:
        return 0 if self.group is None else len(self.group_labels)

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            y=self.y[rows],
            x=self.x[rows],
            w=None if self.w is None else self.w[rows],
            group=None if self.group is None else self.group[rows],
            outcome_kind=self.outcome_kind,
            x_names=list(self.x_names),
            w_names=list(self.w_names),
            group_labels=list(self.group_labels),
        )


def relabel_groups(values: Sequence) -> tuple[np.ndarray, list[str]]:
    """Map arbitrary labels to contiguous codes in order of first appearance."""
    index: dict[str, int] = {}
    codes = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        key = str(v)
        codes[i] = index.setdefault(key, len(index))
    return codes, list(index)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass
class Schema:
    """Column roles for :func:`load_csv`.

    ``bart_cols=None`` means every column not claimed by another role.
    ``outcome=None`` reads covariates only (the outcome is filled with zeros).
    """

    outcome: str | None
    bart_cols: list[str] | None = None
    h_cols: list[str] = field(default_factory=list)
    group_col: str | None = None
    binary: bool = False


def load_csv(path, schema: Schema, group_labels: Sequence[str] | None = None) -> Dataset:
    """Read a headered UTF-8 CSV into a :class:`Dataset`.

    ``group_labels`` pins the label-to-code mapping (used at predict time so that
    codes agree with the training data); unseen labels get fresh codes.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    cols = {name: k for k, name in enumerate(header)}
    if schema.outcome is not None and schema.outcome not in cols:
        raise DataError(f"{path}: outcome column {schema.outcome!r} not found")
    for name in list(schema.h_cols) + [c for c in [schema.group_col] if c]:
        if name not in cols:
            raise DataError(f"{path}: column {name!r} not found")
    claimed = {schema.outcome, *schema.h_cols, *([schema.group_col] if schema.group_col else [])}
    bart_cols = schema.bart_cols
    if bart_cols is None:
        bart_cols = [h for h in header if h not in claimed]
    for name in bart_cols:
        if name not in cols:
            raise DataError(f"{path}: column {name!r} not found")
    if not bart_cols:
        raise DataError(f"{path}: no BART covariate columns")

    def numeric(names: list[str]) -> np.ndarray:
        out = np.empty((len(rows), len(names)))
        for i, row in enumerate(rows):
            for j, name in enumerate(names):
                c = cols[name]
                cell = row[c].strip() if c < len(row) else ""
                if cell == "":
                    # rows are 1-based and the header is row 1
                    raise DataError(f"{path}: missing cell at row {i + 2}, column {name}")
                try:
                    out[i, j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {i + 2}, column {name}"
                    ) from None
                if not math.isfinite(out[i, j]):
                    raise DataError(f"{path}: non-finite cell at row {i + 2}, column {name}")
        return out

    y = numeric([schema.outcome])[:, 0] if schema.outcome is not None else np.zeros(len(rows))
    x = numeric(list(bart_cols))
    w = numeric(list(schema.h_cols)) if schema.h_cols else None
    group = None
    labels: list[str] = []
    if schema.group_col:
        c = cols[schema.group_col]
        raw = []
        for i, row in enumerate(rows):
            cell = row[c].strip() if c < len(row) else ""
            if cell == "":
                raise DataError(f"{path}: missing cell at row {i + 2}, column {schema.group_col}")
            raw.append(cell)
        if group_labels is not None:
            index = {lab: k for k, lab in enumerate(group_labels)}
            labels = list(group_labels)
            group = np.empty(len(raw), dtype=np.int64)
            for i, lab in enumerate(raw):
                if lab not in index:
                    index[lab] = len(labels)
                    labels.append(lab)
                group[i] = index[lab]
        else:
            group, labels = relabel_groups(raw)
    kind = "binary" if schema.binary else "continuous"
    return Dataset(
        y=y,
        x=x,
        w=w,
        group=group,
        outcome_kind=kind,
        x_names=list(bart_cols),
        w_names=list(schema.h_cols),
        group_labels=labels,
    )


@dataclass(frozen=True)
class ScalingRecord:
    y_min: float
    y_max: float

    def scale(self, y):
        y = np.asarray(y, dtype=float)
        return (y - 0.5 * (self.y_min + self.y_max)) / (self.y_max - self.y_min)

    def unscale(self, y_scaled):
        y_scaled = np.asarray(y_scaled, dtype=float)
        return y_scaled * (self.y_max - self.y_min) + 0.5 * (self.y_min + self.y_max)

    def unscale_variance(self, var):
        return np.asarray(var, dtype=float) * (self.y_max - self.y_min) ** 2


def scale_outcome(y) -> tuple[np.ndarray, ScalingRecord]:
    """Map ``y`` affinely onto ``[-0.5, 0.5]``."""
    y = np.asarray(y, dtype=float)
    lo, hi = float(np.min(y)), float(np.max(y))
    if not hi > lo:
        raise DataError("constant outcome cannot be scaled")
    rec = ScalingRecord(lo, hi)
    return rec.scale(y), rec


def friedman_like_mean(x: np.ndarray) -> np.ndarray:
    """Noiseless regression function of the three-covariate benchmark."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    with np.errstate(divide="ignore"):
        return (
            0.5
            + 0.1 * x1
            + 0.3 * x2**2
            + 0.7 * np.sin(x3)
            + 0.2 * x1 * x2
            + 0.9 * np.sqrt(np.abs(x1 * x3))
            + 0.4 * np.exp(x2 * x3)
            + 0.8 * np.log(np.abs(x1 * x2 * x3))
        )


def simulate_friedman_like(
    n: int, seed: int, noise_var: float = 2.0, return_truth: bool = False
):
    """Draw the nonlinear three-covariate benchmark dataset.

    Covariates are iid standard normal and the noise is normal with variance
    ``noise_var``. Rows whose covariate product is numerically zero are redrawn.
    With ``return_truth`` the noiseless means are returned alongside.
    """
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    while True:
        bad = np.abs(x[:, 0] * x[:, 1] * x[:, 2]) < 1e-300
        if not bad.any():
            break
        x[bad] = rng.standard_normal((int(bad.sum()), 3))
    f = friedman_like_mean(x)
    y = f + math.sqrt(noise_var) * rng.standard_normal(n)
    if n < 2:
        # a single row is a valid draw but not a valid Dataset
        return (y, x, f) if return_truth else (y, x)
    ds = Dataset(y=y, x=x, x_names=["x1", "x2", "x3"])
    return (ds, f) if return_truth else ds
