"""Telemonitoring CSV ingestion, standardization, splits, and sequence tensors.

The input is the UCI Parkinson's telemonitoring table: one row per voice
recording, identified columns for subject, demographics, the two UPDRS
scores, and 16 precomputed voice measurements. Columns are looked up by
header name, so files with reordered columns load fine.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateColumnError,
    EmptyInputError,
    ParameterError,
    ParseError,
    SchemaError,
)
from .linalg import RandomSource

VOICE_FEATURES = (
    "Jitter(%)",
    "Jitter(Abs)",
    "Jitter:RAP",
    "Jitter:PPQ5",
    "Jitter:DDP",
    "Shimmer",
    "Shimmer(dB)",
    "Shimmer:APQ3",
    "Shimmer:APQ5",
    "Shimmer:APQ11",
    "Shimmer:DDA",
    "NHR",
    "HNR",
    "RPDE",
    "DFA",
    "PPE",
)

REQUIRED_COLUMNS = (
    "subject#",
    "age",
    "sex",
    "test_time",
    "motor_UPDRS",
    "total_UPDRS",
) + VOICE_FEATURES

# Everything a total-UPDRS model may regress on by default: demographics,
# visit time, the motor subscale, and the 16 voice measures (20 columns).
DEFAULT_REGRESSORS = ("age", "sex", "test_time", "motor_UPDRS") + VOICE_FEATURES

TARGET_COLUMNS = {"total": "total_UPDRS", "motor": "motor_UPDRS"}


@dataclass(frozen=True)
class VoiceRecord:
    subject_id: int
    age: float
    sex: int
    test_time: float
    motor_updrs: float
    total_updrs: float
    voice_features: tuple  # 16 floats, VOICE_FEATURES order

    def __post_init__(self):
        if len(self.voice_features) != len(VOICE_FEATURES):
            raise ParseError(
                f"expected {len(VOICE_FEATURES)} voice features, got {len(self.voice_features)}"
            )


@dataclass(frozen=True)
class Dataset:
    records: tuple
    feature_names: tuple  # column labels as they appeared in the file

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_subjects(self) -> int:
        return len({r.subject_id for r in self.records})

    def subject_ids(self) -> np.ndarray:
        return np.array([r.subject_id for r in self.records], dtype=np.int64)

    def column(self, name: str) -> np.ndarray:
        """Numeric column by header name (any column except subject#)."""
        if name == "age":
            return np.array([r.age for r in self.records])
        if name == "sex":
            return np.array([float(r.sex) for r in self.records])
        if name == "test_time":
            return np.array([r.test_time for r in self.records])
        if name == "motor_UPDRS":
            return np.array([r.motor_updrs for r in self.records])
        if name == "total_UPDRS":
            return np.array([r.total_updrs for r in self.records])
        if name in VOICE_FEATURES:
            idx = VOICE_FEATURES.index(name)
            return np.array([r.voice_features[idx] for r in self.records])
        raise ConfigError(f"unknown column {name!r}")


@dataclass(frozen=True)
class SequenceTensor:
    """N sequences of T steps with d values per step, stored as (N, T, d)."""

    data: np.ndarray

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def flatten(self) -> np.ndarray:
        return self.data.reshape(self.n, self.t * self.d)


@dataclass
class StandardizationStats:
    mean: np.ndarray
    stddev: np.ndarray
    column_names: tuple = field(default=())


def _parse_cell(raw: str, column: str, row_number: int) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(
            f"row {row_number}: column {column!r} has non-numeric value {raw!r}"
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row_number}: column {column!r} is not finite ({raw!r})")
    return value


def load_csv(path) -> Dataset:
    """Parse the telemonitoring CSV, validating schema and every cell.

    Row numbers in errors count the header as row 1.
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        positions = {}
        for i, name in enumerate(header):
            positions.setdefault(name, i)
        missing = [c for c in REQUIRED_COLUMNS if c not in positions]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(repr(m) for m in missing)}")

        records = []
        for row_number, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(
                    f"row {row_number}: expected {len(header)} cells, got {len(row)}"
                )

            def cell(col: str) -> float:
                return _parse_cell(row[positions[col]].strip(), col, row_number)

            sex_value = cell("sex")
            if sex_value not in (0.0, 1.0):
                raise ParseError(f"row {row_number}: column 'sex' must be 0 or 1, got {sex_value}")
            records.append(
                VoiceRecord(
                    subject_id=int(cell("subject#")),
                    age=cell("age"),
                    sex=int(sex_value),
                    test_time=cell("test_time"),
                    motor_updrs=cell("motor_UPDRS"),
                    total_updrs=cell("total_UPDRS"),
                    voice_features=tuple(cell(v) for v in VOICE_FEATURES),
                )
            )

    if not records:
        raise EmptyInputError(f"{path}: no data rows")
    return Dataset(records=tuple(records), feature_names=tuple(header))


def build_design(dataset: Dataset, target: str, regressors) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (X, y): one row per record in file order.

    ``target`` is "total" or "motor"; ``regressors`` is an ordered list of
    column names that become the columns of X.
    """
    if target not in TARGET_COLUMNS:
        raise ConfigError(f"target must be one of {sorted(TARGET_COLUMNS)}, got {target!r}")
    target_column = TARGET_COLUMNS[target]
    regressors = list(regressors)
    if target_column in regressors:
        raise ConfigError(f"target column {target_column!r} cannot be a regressor")
    known = set(REQUIRED_COLUMNS) - {"subject#"}
    for name in regressors:
        if name not in known:
            raise ConfigError(f"unknown regressor {name!r}")
    if not regressors:
        raise ConfigError("regressor list is empty")
    columns = [dataset.column(name) for name in regressors]
    X = np.column_stack(columns)
    y = dataset.column(target_column)
    return X, y


def fit_standardizer(X: np.ndarray, column_names=()) -> StandardizationStats:
    """Per-column mean/stddev (population) from training rows only."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise EmptyInputError("cannot standardize an empty matrix")
    mean = X.mean(axis=0)
    stddev = X.std(axis=0)
    for j, s in enumerate(stddev):
        if s <= 0.0:
            label = column_names[j] if j < len(column_names) else f"column {j}"
            raise DegenerateColumnError(f"{label} is constant; cannot standardize")
    return StandardizationStats(mean=mean, stddev=stddev, column_names=tuple(column_names))


def apply_standardizer(stats: StandardizationStats, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != stats.mean.shape[0]:
        raise ConfigError(
            f"standardizer fitted on {stats.mean.shape[0]} columns, got {X.shape[1]}"
        )
    return (X - stats.mean) / stats.stddev


def invert_standardizer(stats: StandardizationStats, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) * stats.stddev + stats.mean


def kfold_split(n: int, k: int, rng: RandomSource):
    """Shuffled k-fold split of 0..n-1.

    Validation sets are disjoint, cover every index, and differ in size by
    at most one (the first ``n % k`` folds get the extra element).
    """
    if k < 2 or k > n:
        raise ParameterError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = rng.permutation(n)
    base = n // k
    extra = n % k
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        val = np.sort(perm[start : start + size])
        train = np.sort(np.concatenate([perm[:start], perm[start + size :]]))
        folds.append((train, val))
        start += size
    return folds


def holdout_split(n: int, test_fraction: float, rng: RandomSource):
    """One shuffled train-and-validate / test partition of 0..n-1."""
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(n * test_fraction))
    perm = rng.permutation(n)
    test = np.sort(perm[:n_test])
    trainval = np.sort(perm[n_test:])
    return trainval, test


def grouped_holdout_split(groups: np.ndarray, test_fraction: float, rng: RandomSource):
    """Holdout split that keeps whole groups on one side.

    Shuffled groups are assigned to the test side until its row count
    reaches ``round(n * test_fraction)``.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    groups = np.asarray(groups)
    unique = np.unique(groups)
    order = rng.permutation(len(unique))
    target = int(round(len(groups) * test_fraction))
    test_groups = set()
    total = 0
    for gi in order:
        if total >= target:
            break
        g = unique[gi]
        test_groups.add(g)
        total += int(np.sum(groups == g))
    mask = np.isin(groups, sorted(test_groups))
    test = np.nonzero(mask)[0]
    trainval = np.nonzero(~mask)[0]
    return trainval, test


def grouped_kfold_split(groups: np.ndarray, k: int, rng: RandomSource):
    """K folds whose validation sets never split a group across folds."""
    groups = np.asarray(groups)
    n = len(groups)
    unique = np.unique(groups)
    if k < 2 or k > len(unique):
        raise ParameterError(f"k must satisfy 2 <= k <= number of groups, got k={k}")
    order = rng.permutation(len(unique))
    fold_rows = [[] for _ in range(k)]
    fold_sizes = [0] * k
    for gi in order:
        g = unique[gi]
        rows = np.nonzero(groups == g)[0]
        smallest = min(range(k), key=lambda i: (fold_sizes[i], i))
        fold_rows[smallest].append(rows)
        fold_sizes[smallest] += len(rows)
    folds = []
    everything = np.arange(n)
    for i in range(k):
        val = np.sort(np.concatenate(fold_rows[i])) if fold_rows[i] else np.array([], dtype=int)
        train = np.setdiff1d(everything, val)
        folds.append((train, val))
    return folds


def to_sequences(X: np.ndarray) -> SequenceTensor:
    """Reshape (N, d) features into N pseudo-sequences of d steps of 1 value.

    Each selected feature of a recording becomes one timestep, in column
    order, so a recurrent model reads the feature vector as a sequence.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise EmptyInputError("cannot build sequences from an empty matrix")
    n, d = X.shape
    return SequenceTensor(data=X.reshape(n, d, 1).copy())
