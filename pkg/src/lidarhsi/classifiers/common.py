from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Labeled feature vectors; labels are class ids ``1..K`` and every class occurs."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2 or y.shape != (X.shape[0],) or X.shape[0] == 0:
            raise DataError(f"training set needs X (n, d) and y (n,), got {X.shape} and {y.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("training features must be finite")
        if np.any(y != np.round(y)) or y.min() < 1:
            raise DataError("class ids must be integers >= 1")
        y = y.astype(np.int64)
        missing = np.setdiff1d(np.arange(1, y.max() + 1), y)
        if missing.size:
            raise DataError(f"classes without training samples: {missing.tolist()}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_classes(self) -> int:
        return int(self.y.max())

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes + 1)[1:]


def vote(counts: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Class with the most votes per row; ties go to the smallest class id."""
    return classes[np.argmax(counts, axis=1)]


def as_features(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[np.newaxis]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DataError(f"expected {n_features} features per row, got shape {X.shape}")
    return X
