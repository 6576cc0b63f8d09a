"""Dataset ingestion: LIBSVM and CSV parsing, z-scoring, train/test splits."""

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np


class ParseError(ValueError):
    """A dataset file violates its declared format; message names the line."""


@dataclass(eq=False)
class InstancePool:
    """Dense feature matrix plus per-instance labels.

    The labels are ground truth visible only to the benchmark harness (the
    oracle side); the learner never sees them directly.
    """

    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) float64
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"labels length {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain NaN or Inf")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("labels contain NaN or Inf")
        if self.feature_names is not None:
            self.feature_names = tuple(self.feature_names)
            if len(self.feature_names) != self.features.shape[1]:
                raise ValueError("feature_names length does not match feature count")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class StandardizationStats:
    """Per-column moments used to z-score features and labels."""

    mean: np.ndarray
    std: np.ndarray
    label_mean: float
    label_std: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0) or self.label_std <= 0:
            raise ValueError("standard deviations must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "label_mean": self.label_mean,
            "label_std": self.label_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            label_mean=float(d["label_mean"]),
            label_std=float(d["label_std"]),
        )


@dataclass
class Split:
    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)


def _parse_float(token: str, lineno: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric {what} {token!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"line {lineno}: non-finite {what} {token!r}")
    return value


def parse_libsvm(text: str, expected_dim: Optional[int] = None) -> InstancePool:
    """Parse LIBSVM sparse text: "label idx:val idx:val ..." per line.

    Indices are 1-based and must be strictly increasing within a line
    (strict mode, so corrupt files fail early). Unmentioned indices are 0.
    The feature count is the largest index seen, or ``expected_dim`` if that
    is larger. Comments are not supported.
    """
    rows = []
    labels = []
    max_dim = int(expected_dim) if expected_dim else 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "#" in line:
            raise ParseError(f"line {lineno}: comments are not supported")
        tokens = line.split()
        labels.append(_parse_float(tokens[0], lineno, "label"))
        entries = []
        prev_idx = 0
        for tok in tokens[1:]:
            idx_str, _, val_str = tok.partition(":")
            if not _:
                raise ParseError(f"line {lineno}: malformed feature token {tok!r}")
            try:
                idx = int(idx_str)
            except ValueError:
                raise ParseError(
                    f"line {lineno}: non-numeric feature index {idx_str!r}"
                ) from None
            if idx < 1:
                raise ParseError(f"line {lineno}: index must be >= 1, got {idx}")
            if idx <= prev_idx:
                raise ParseError(
                    f"line {lineno}: indices must be strictly increasing "
                    f"({idx} after {prev_idx})"
                )
            entries.append((idx, _parse_float(val_str, lineno, "value")))
            prev_idx = idx
        max_dim = max(max_dim, prev_idx)
        rows.append(entries)

    features = np.zeros((len(rows), max_dim), dtype=np.float64)
    for i, entries in enumerate(rows):
        for idx, val in entries:
            features[i, idx - 1] = val
    return InstancePool(features=features, labels=np.asarray(labels))


def dump_libsvm(pool: InstancePool) -> str:
    """Serialize a pool back to LIBSVM text (17 significant digits, zeros omitted)."""
    out = io.StringIO()
    for i in range(pool.n_instances):
        parts = [format(pool.labels[i], ".17g")]
        row = pool.features[i]
        for j in np.nonzero(row)[0]:
            parts.append(f"{j + 1}:{format(row[j], '.17g')}")
        out.write(" ".join(parts) + "\n")
    return out.getvalue()


def parse_csv(text: str, label_column: Union[str, int]) -> InstancePool:
    """Parse a rectangular CSV with header; the label column becomes labels."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("line 1: empty CSV, header row required") from None
    if isinstance(label_column, int):
        if not -len(header) <= label_column < len(header):
            raise ParseError(f"label column index {label_column} out of range")
        label_idx = label_column % len(header)
    else:
        if label_column not in header:
            raise ParseError(f"label column {label_column!r} not found in header")
        label_idx = header.index(label_column)

    feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)
    rows = []
    labels = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"line {lineno}: ragged row, expected {len(header)} cells, "
                f"got {len(row)}"
            )
        labels.append(_parse_float(row[label_idx], lineno, "label"))
        rows.append(
            [_parse_float(c, lineno, "cell") for i, c in enumerate(row) if i != label_idx]
        )
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
    return InstancePool(features=features, labels=np.asarray(labels), feature_names=feature_names)


def fit_standardizer(pool: InstancePool, on_indices: Sequence[int]) -> StandardizationStats:
    """Column means and population stds over the given instances.

    Zero-variance columns get std = 1 so constant features map to 0 instead
    of dividing by zero; same rule for the labels.
    """
    idx = np.asarray(on_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("on_indices must be non-empty")
    X = pool.features[idx]
    y = pool.labels[idx]
    std = X.std(axis=0)
    label_std = float(y.std())
    return StandardizationStats(
        mean=X.mean(axis=0),
        std=np.where(std == 0.0, 1.0, std),
        label_mean=float(y.mean()),
        label_std=label_std if label_std > 0 else 1.0,
    )


def apply_standardizer(pool: InstancePool, stats: StandardizationStats) -> InstancePool:
    """Return a new pool with z-scored features and labels."""
    if stats.mean.shape != (pool.n_features,):
        raise ValueError(
            f"standardizer dimension {stats.mean.shape[0]} does not match "
            f"pool dimension {pool.n_features}"
        )
    return InstancePool(
        features=(pool.features - stats.mean) / stats.std,
        labels=(pool.labels - stats.label_mean) / stats.label_std,
        feature_names=pool.feature_names,
    )


def split_pool(pool: InstancePool, train_fraction: float, seed: int) -> Split:
    """Deterministic shuffled split; |train| = floor(train_fraction * N)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if pool.n_instances == 0:
        raise ValueError("pool is empty")
    perm = np.random.default_rng(seed).permutation(pool.n_instances)
    n_train = int(math.floor(train_fraction * pool.n_instances))
    return Split(train_indices=perm[:n_train], test_indices=perm[n_train:])
