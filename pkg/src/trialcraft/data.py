"""Trial data substrate: ingestion, imputation, feature expansion, folds.

Everything here is a pure function of its inputs; datasets and fold plans
are immutable after construction and safe to share across threads.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AllMissingColumn,
    ArmNotBinary,
    ConfigError,
    DataError,
    EmptyArm,
    MalformedCsv,
    MissingOutcome,
    TooManyFolds,
    UnknownColumn,
)

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class TrialDataset:
    """Outcomes, binary arm assignments and a covariate matrix.

    Covariates may contain NaN between ingestion and `impute_missing`;
    estimators require a complete matrix (see `check_complete`).
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError("covariate matrix must be 2-dimensional")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        n = y.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 participants, got {n}")
        if z.shape[0] != n or x.shape[0] != n:
            raise DataError("y, z and x must have the same number of rows")
        if len(self.column_names) != x.shape[1]:
            raise DataError("column_names must match the covariate count")
        if not np.all(np.isin(z, (0.0, 1.0))):
            raise ArmNotBinary("arm indicator must be 0 or 1")
        if z.sum() < 1 or (1 - z).sum() < 1:
            raise EmptyArm("both arms must be non-empty")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise MissingOutcome("outcome and arm must be fully observed")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise UnknownColumn(f"unknown column {name!r}") from None

    def columns(self, names) -> np.ndarray:
        """Sub-matrix of the named covariates, in the given order."""
        idx = [self.column_index(name) for name in names]
        return self.x[:, idx]

    def with_covariates(self, x: np.ndarray, names) -> "TrialDataset":
        return TrialDataset(self.y, self.z, x, tuple(names))


def check_complete(d: TrialDataset) -> None:
    """Raise unless every covariate cell is finite (run impute_missing first)."""
    if not np.all(np.isfinite(d.x)):
        raise DataError(
            "covariate matrix contains missing values; run impute_missing first"
        )


def _parse_cell(text: str, row: int, col: str) -> float:
    token = text.strip()
    if token in MISSING_TOKENS:
        return math.nan
    try:
        return float(token)
    except ValueError:
        raise MalformedCsv(
            f"cannot parse {text!r} in column {col!r}, data row {row}"
        ) from None


def ingest_csv(path, outcome_col: str, arm_col: str, covariate_cols) -> TrialDataset:
    """Load a trial dataset from a UTF-8, comma-delimited CSV with a header.

    Missing covariate cells (empty or "NA") are kept as NaN for
    `impute_missing`; a missing outcome or arm cell is fatal.
    """
    covariate_cols = list(covariate_cols)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        positions = {}
        for name in [outcome_col, arm_col, *covariate_cols]:
            if name not in header:
                raise UnknownColumn(f"{path}: column {name!r} not in header")
            positions[name] = header.index(name)

        rows = []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise MalformedCsv(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            rows.append(row)

    if not rows:
        raise MalformedCsv(f"{path}: no data rows")

    y = np.empty(len(rows))
    z = np.empty(len(rows))
    x = np.empty((len(rows), len(covariate_cols)))
    for r, row in enumerate(rows, start=1):
        yv = _parse_cell(row[positions[outcome_col]], r, outcome_col)
        if math.isnan(yv):
            raise MissingOutcome(f"{path}: missing outcome in data row {r}")
        zv = _parse_cell(row[positions[arm_col]], r, arm_col)
        if math.isnan(zv):
            raise ArmNotBinary(f"{path}: missing arm value in data row {r}")
        if zv not in (0.0, 1.0):
            raise ArmNotBinary(f"{path}: arm value {zv!r} in data row {r} is not 0/1")
        y[r - 1] = yv
        z[r - 1] = zv
        for j, col in enumerate(covariate_cols):
            x[r - 1, j] = _parse_cell(row[positions[col]], r, col)

    return TrialDataset(y, z, x, tuple(covariate_cols))


def impute_missing(d: TrialDataset) -> TrialDataset:
    """Mean-impute missing covariates and append 0/1 missingness indicators.

    Imputation uses only the covariate column itself (never outcome or arm),
    so it is blind to treatment assignment by construction.
    """
    missing = ~np.isfinite(d.x)
    if not missing.any():
        return d
    x = d.x.copy()
    names = list(d.column_names)
    indicators = []
    indicator_names = []
    for j in range(d.p):
        col_missing = missing[:, j]
        if not col_missing.any():
            continue
        observed = x[~col_missing, j]
        if observed.size == 0:
            raise AllMissingColumn(f"column {names[j]!r} is entirely missing")
        x[col_missing, j] = observed.mean()
        indicators.append(col_missing.astype(float))
        indicator_names.append(f"{names[j]}_missing")
    x = np.column_stack([x, *indicators])
    return d.with_covariates(x, tuple(names) + tuple(indicator_names))


@dataclass(frozen=True)
class FeatureExpansion:
    """Deterministic polynomial/interaction expansion of base covariates.

    `base_columns=None` means every dataset column. Expanded order: base
    columns, then per base column the powers 2..polynomial_degree, then the
    interaction products in listed order. `forced_columns` must name
    expanded columns; they bypass selection at the refit step.
    """

    base_columns: tuple[str, ...] | None = None
    interactions: tuple[tuple[str, str], ...] = ()
    polynomial_degree: int = 1
    forced_columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.base_columns is not None:
            object.__setattr__(self, "base_columns", tuple(self.base_columns))
        object.__setattr__(
            self, "interactions", tuple((a, b) for a, b in self.interactions)
        )
        object.__setattr__(self, "forced_columns", tuple(self.forced_columns))
        if self.polynomial_degree < 1:
            raise ConfigError("polynomial_degree must be >= 1")

    def expanded_names(self, available) -> tuple[str, ...]:
        base = tuple(self.base_columns) if self.base_columns is not None else tuple(available)
        for name in base:
            if name not in available:
                raise UnknownColumn(f"unknown column {name!r}")
        names = list(base)
        for name in base:
            for degree in range(2, self.polynomial_degree + 1):
                names.append(f"{name}^{degree}")
        for a, b in self.interactions:
            for name in (a, b):
                if name not in available:
                    raise UnknownColumn(f"unknown column {name!r}")
            names.append(f"{a}:{b}")
        for name in self.forced_columns:
            if name not in names:
                raise UnknownColumn(
                    f"forced column {name!r} is not among the expanded columns"
                )
        return tuple(names)


def expand_features(d: TrialDataset, spec: FeatureExpansion) -> TrialDataset:
    """Apply a FeatureExpansion; pure function of (x, spec), stable order."""
    names = spec.expanded_names(d.column_names)
    base = tuple(spec.base_columns) if spec.base_columns is not None else d.column_names
    cols = [d.x[:, d.column_index(name)] for name in base]
    for name in base:
        col = d.x[:, d.column_index(name)]
        for degree in range(2, spec.polynomial_degree + 1):
            cols.append(col**degree)
    for a, b in spec.interactions:
        cols.append(d.x[:, d.column_index(a)] * d.x[:, d.column_index(b)])
    return d.with_covariates(np.column_stack(cols), names)


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic K-fold partition of participant indices.

    Fold labels are 1..k. Sizes differ by at most one overall; when
    stratified by arm, by at most one within each arm.
    """

    assignments: np.ndarray
    k: int
    seed: int
    stratified_by_arm: bool

    def __post_init__(self) -> None:
        a = np.asarray(self.assignments, dtype=int)
        object.__setattr__(self, "assignments", a)
        if a.min() < 1 or a.max() > self.k:
            raise ConfigError("fold labels must lie in 1..k")
        counts = np.bincount(a, minlength=self.k + 1)[1:]
        if counts.min() == 0:
            raise ConfigError("every fold must be non-empty")

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def fold_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def complement_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)


def make_folds(
    n: int,
    k: int,
    z: np.ndarray | None = None,
    seed: int = 0,
    stratified: bool = False,
) -> FoldPlan:
    """Seeded shuffle then round-robin assignment; balanced by construction."""
    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")
    if stratified:
        if z is None:
            raise ConfigError("stratified folds require the arm vector")
        z = np.asarray(z)
        smallest_arm = int(min(z.sum(), n - z.sum()))
        if k > smallest_arm:
            raise TooManyFolds(
                f"k={k} exceeds the smaller arm size {smallest_arm}"
            )
    elif k > n:
        raise TooManyFolds(f"k={k} exceeds n={n}")

    rng = np.random.default_rng(seed)
    assignments = np.zeros(n, dtype=int)
    if stratified:
        offset = 0
        for arm in (1, 0):
            idx = np.flatnonzero(np.asarray(z) == arm)
            perm = rng.permutation(idx)
            for i, participant in enumerate(perm):
                assignments[participant] = (offset + i) % k + 1
            offset += idx.size
    else:
        perm = rng.permutation(n)
        for i, participant in enumerate(perm):
            assignments[participant] = i % k + 1
    return FoldPlan(assignments, k, seed, stratified)
