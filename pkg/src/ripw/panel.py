"""Panel data model: balanced n-by-T panels, assignment paths, time weights,
and the two-way centering algebra used throughout the package.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    DimensionTooLarge,
    DuplicateCell,
    MissingValue,
    NonBinaryTreatment,
    UnbalancedPanel,
    ValidationError,
)

AssignmentPath = tuple  # ordered bits (w_1, ..., w_T), each in {0, 1}

MAX_ENUM_PERIODS = 20


def enumerate_paths(T: int) -> list[AssignmentPath]:
    """All 2^T assignment paths of length ``T`` in lexicographic order."""
    if T < 1:
        raise ValidationError(f"period count must be >= 1, got {T}")
    if T > MAX_ENUM_PERIODS:
        raise DimensionTooLarge(
            f"T={T} exceeds the enumeration cap of {MAX_ENUM_PERIODS}"
        )
    return [tuple(bits) for bits in itertools.product((0, 1), repeat=T)]


def validate_path(path: Sequence[int], T: int | None = None) -> AssignmentPath:
    """Coerce ``path`` to a canonical tuple and check it is binary."""
    bits = tuple(int(b) for b in path)
    if T is not None and len(bits) != T:
        raise ValidationError(f"path {bits} has length {len(bits)}, expected {T}")
    if any(b not in (0, 1) for b in bits):
        raise ValidationError(f"path {bits} has entries outside {{0, 1}}")
    return bits


def center_doubly(M: np.ndarray) -> np.ndarray:
    """Remove row means, column means, and the grand mean from ``M``.

    The result has all row and column means equal to zero; applying the
    operation twice equals applying it once.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValidationError(f"expected a 2-d array, got shape {M.shape}")
    row = M.mean(axis=1, keepdims=True)
    col = M.mean(axis=0, keepdims=True)
    return M - row - col + M.mean()


def centering_matrix(T: int) -> np.ndarray:
    """Materialize J = I - 11'/T.  Intended for tests and small solves; the
    production code centers by subtracting means instead."""
    return np.eye(T) - np.full((T, T), 1.0 / T)


def center_rows(M: np.ndarray) -> np.ndarray:
    """Apply J to each row of ``M`` (subtract the per-row mean)."""
    M = np.asarray(M, dtype=float)
    return M - M.mean(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TimeWeights:
    """Nonnegative weights over periods, summing to one."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if xi.size < 1:
            raise ValidationError("time weights must be non-empty")
        if np.any(xi < 0):
            raise ValidationError(f"time weights must be nonnegative, got {xi}")
        if abs(xi.sum() - 1.0) > 1e-12:
            raise ValidationError(f"time weights must sum to 1, got sum {xi.sum()!r}")
        xi = xi.copy()
        xi.flags.writeable = False
        object.__setattr__(self, "xi", xi)

    @classmethod
    def equal(cls, T: int) -> "TimeWeights":
        return cls(np.full(T, 1.0 / T))

    @property
    def T(self) -> int:
        return int(self.xi.size)

    def is_equal_weights(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.xi - 1.0 / self.T)) <= tol)


@dataclass(frozen=True)
class LongCsvSchema:
    """Column naming for long-format panel CSV files."""

    unit_col: str = "unit_id"
    period_col: str = "period"
    outcome_col: str = "outcome"
    treated_col: str = "treated"
    covariate_cols: tuple[str, ...] | None = None  # None: all remaining columns


@dataclass(frozen=True)
class PanelDataset:
    """A balanced panel: outcomes ``Y`` (n x T), binary assignments ``W``
    (n x T), and optional covariates ``X`` (n x T x p).

    Arrays are immutable after construction; periods are re-indexed 1..T in
    sorted order while original labels are kept for reporting.
    """

    Y: np.ndarray
    W: np.ndarray
    X: np.ndarray | None = None
    unit_labels: tuple = ()
    period_labels: tuple = ()
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        W = np.asarray(self.W)
        if Y.ndim != 2 or W.shape != Y.shape:
            raise ValidationError(
                f"Y and W must be matching 2-d arrays, got {Y.shape} and {W.shape}"
            )
        n, T = Y.shape
        if T < 2:
            raise ValidationError(f"panels need at least two periods, got T={T}")
        if not np.all(np.isfinite(Y)):
            raise MissingValue("outcome matrix contains missing or non-finite values")
        w_float = np.asarray(W, dtype=float)
        if not np.all(np.isfinite(w_float)):
            raise MissingValue("treatment matrix contains missing values")
        if not np.all(np.isin(w_float, (0.0, 1.0))):
            bad = sorted(set(np.unique(w_float)) - {0.0, 1.0})
            raise NonBinaryTreatment(f"treatment values outside {{0,1}}: {bad}")
        W = w_float.astype(np.int8)
        X = self.X
        if X is not None:
            X = np.asarray(X, dtype=float)
            if X.ndim == 2:
                X = X[:, :, None]
            if X.shape[:2] != (n, T):
                raise ValidationError(
                    f"covariates must have shape (n, T, p), got {X.shape}"
                )
            if not np.all(np.isfinite(X)):
                raise MissingValue("covariate array contains missing values")
            X = X.copy()
            X.flags.writeable = False
        Y = Y.copy()
        Y.flags.writeable = False
        W = W.copy()
        W.flags.writeable = False
        unit_labels = tuple(self.unit_labels) if self.unit_labels else tuple(range(1, n + 1))
        period_labels = (
            tuple(self.period_labels) if self.period_labels else tuple(range(1, T + 1))
        )
        if len(unit_labels) != n:
            raise ValidationError("unit_labels length does not match n")
        if len(period_labels) != T:
            raise ValidationError("period_labels length does not match T")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "unit_labels", unit_labels)
        object.__setattr__(self, "period_labels", period_labels)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return int(self.Y.shape[0])

    @property
    def T(self) -> int:
        return int(self.Y.shape[1])

    @property
    def n_covariates(self) -> int:
        return 0 if self.X is None else int(self.X.shape[2])

    def paths(self) -> list[AssignmentPath]:
        """Realized assignment path of each unit."""
        return [tuple(int(b) for b in row) for row in self.W]

    def subset(self, indices: Sequence[int]) -> "PanelDataset":
        """New panel restricted to the given unit indices (order preserved)."""
        idx = np.asarray(indices, dtype=int)
        return PanelDataset(
            Y=self.Y[idx],
            W=self.W[idx],
            X=None if self.X is None else self.X[idx],
            unit_labels=tuple(self.unit_labels[i] for i in idx),
            period_labels=self.period_labels,
            covariate_names=self.covariate_names,
        )


def load_panel(path, schema: LongCsvSchema | None = None) -> PanelDataset:
    """Read a long-format CSV into a balanced :class:`PanelDataset`.

    The file must contain one row per (unit, period) cell with columns
    ``unit_id, period, outcome, treated[, x1..xp]``.  Units are ordered by
    first appearance, periods ascending.  Unbalanced panels, duplicate
    cells, and non-binary treatment values are rejected.
    """
    schema = schema or LongCsvSchema()
    df = pd.read_csv(path)
    required = [schema.unit_col, schema.period_col, schema.outcome_col, schema.treated_col]
    missing_cols = [c for c in required if c not in df.columns]
    if missing_cols:
        raise ValidationError(f"CSV is missing required columns: {missing_cols}")
    if schema.covariate_cols is None:
        cov_cols = tuple(c for c in df.columns if c not in required)
    else:
        cov_cols = tuple(schema.covariate_cols)
        absent = [c for c in cov_cols if c not in df.columns]
        if absent:
            raise ValidationError(f"CSV is missing covariate columns: {absent}")

    dup = df.duplicated(subset=[schema.unit_col, schema.period_col])
    if dup.any():
        pair = df.loc[dup.idxmax(), [schema.unit_col, schema.period_col]]
        raise DuplicateCell(
            f"(unit, period) pair appears more than once: "
            f"({pair[schema.unit_col]!r}, {pair[schema.period_col]!r})"
        )

    treated = pd.to_numeric(df[schema.treated_col], errors="coerce")
    if treated.isna().any():
        raise MissingValue("treated column contains missing or non-numeric values")
    bad = set(treated.unique()) - {0, 1}
    if bad:
        raise NonBinaryTreatment(f"treated column contains values outside {{0,1}}: {sorted(bad)}")

    periods = sorted(df[schema.period_col].unique())
    units = list(dict.fromkeys(df[schema.unit_col]))  # first-appearance order
    T = len(periods)
    counts = df.groupby(schema.unit_col)[schema.period_col].nunique()
    short = counts[counts != T]
    if len(short) > 0:
        unit = short.index[0]
        raise UnbalancedPanel(
            f"unit {unit!r} observes {short.iloc[0]} of {T} periods"
        )

    def pivot(col: str) -> np.ndarray:
        wide = df.pivot(index=schema.unit_col, columns=schema.period_col, values=col)
        wide = wide.reindex(index=units, columns=periods)
        return wide.to_numpy(dtype=float)

    Y = pivot(schema.outcome_col)
    W = pivot(schema.treated_col)
    X = None
    if cov_cols:
        X = np.stack([pivot(c) for c in cov_cols], axis=2)
    return PanelDataset(
        Y=Y,
        W=W,
        X=X,
        unit_labels=tuple(units),
        period_labels=tuple(periods),
        covariate_names=cov_cols,
    )
