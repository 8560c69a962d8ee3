"""Radial basis function network with class-wise k-means centres and least-squares output weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DataError
from ..seeding import child_seeds, rng as make_rng
from .common import TrainingSet, as_features, vote
from .modelio import pack, unpack

DEFAULT_CENTERS = 5
KMEANS_ITER = 100
KMEANS_TOL = 1e-6
WIDTH_FLOOR = 1e-6
RIDGE = 1e-8
WIDTH_RULES = ("rms", "distance_std")


def kmeans(X: np.ndarray, k: int, gen: np.random.Generator, max_iter: int = KMEANS_ITER,
           tol: float = KMEANS_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ seeding; returns ``(centers, assignment)``.

    Assignment ties go to the lowest centre index; an emptied cluster keeps
    its previous centre.  Stops when no centre moves more than ``tol``.
    """
    n = len(X)
    chosen = [int(gen.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(gen.choice(n, p=d2 / total))
        else:
            # every remaining sample coincides with a centre
            nxt = int(gen.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    centers = X[chosen].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        assign = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
        moved = centers.copy()
        for c in range(k):
            members = X[assign == c]
            if len(members):
                moved[c] = members.mean(axis=0)
        shift = np.max(np.linalg.norm(moved - centers, axis=1))
        centers = moved
        if shift <= tol:
            break
    assign = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
    return centers, assign


def cluster_widths(X: np.ndarray, centers: np.ndarray, assign: np.ndarray, rule: str = "rms",
                   fill: bool = True) -> np.ndarray:
    """Spread of each cluster around its centre.

    ``rms``
        ``sqrt(mean ||x - c||^2)``, the standard deviation of the member
        samples pooled over all features.
    ``distance_std``
        population standard deviation of the member distances ``||x - c||``.

    Widths are floored at ``WIDTH_FLOOR``.  Clusters with fewer than two
    members are NaN until :func:`fill_lonely_widths` resolves them, which
    happens here unless ``fill`` is false.
    """
    if rule not in WIDTH_RULES:
        raise DataError(f"unknown width rule {rule!r}")
    widths = np.full(len(centers), np.nan)
    for c in range(len(centers)):
        dist = np.linalg.norm(X[assign == c] - centers[c], axis=1)
        if len(dist) >= 2:
            w = np.sqrt(np.mean(dist * dist)) if rule == "rms" else np.std(dist)
            widths[c] = max(w, WIDTH_FLOOR)
    return fill_lonely_widths(widths, centers) if fill else widths


def fill_lonely_widths(widths: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Replace NaN widths by the median of the others.

    With no measured width at all, use the median distance from each centre
    to its nearest other centre (1 for a single centre).
    """
    widths = widths.copy()
    lonely = np.isnan(widths)
    if lonely.all():
        if len(centers) > 1:
            d = cdist(centers, centers)
            np.fill_diagonal(d, np.inf)
            fallback = float(np.median(d.min(axis=1)))
        else:
            fallback = 1.0
        widths[:] = max(fallback, WIDTH_FLOOR)
    elif lonely.any():
        widths[lonely] = np.median(widths[~lonely])
    return widths


def activations(X: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Hidden layer outputs with a trailing bias column of ones."""
    h = np.exp(-cdist(X, centers, "sqeuclidean") / (2.0 * widths * widths))
    return np.hstack([h, np.ones((len(X), 1))])


def solve_output_weights(A: np.ndarray, T: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += ridge
    return np.linalg.solve(gram, A.T @ T)


@dataclass(frozen=True, eq=False)
class RbfnnModel:
    classes: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    center_class: np.ndarray
    weights: np.ndarray  # (c + 1, K), last row is the bias

    def outputs(self, X) -> np.ndarray:
        X = as_features(X, self.centers.shape[1])
        return activations(X, self.centers, self.widths) @ self.weights

    def predict(self, X) -> np.ndarray:
        return vote(self.outputs(X), self.classes)

    def to_arrays(self) -> dict:
        return {"classes": self.classes, "centers": self.centers, "widths": self.widths,
                "center_class": self.center_class, "weights": self.weights}

    @classmethod
    def from_arrays(cls, a: dict) -> "RbfnnModel":
        return cls(a["classes"], a["centers"], a["widths"], a["center_class"], a["weights"])

    def to_bytes(self) -> bytes:
        return pack("rbfnn", self.to_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "RbfnnModel":
        tag, arrays = unpack(blob)
        if tag != "rbfnn":
            raise DataError(f"expected an rbfnn model, got {tag}")
        return cls.from_arrays(arrays)


def rbfnn_train(train: TrainingSet, centers_per_class: int = DEFAULT_CENTERS, seed: int = 0,
                width_rule: str = "rms") -> RbfnnModel:
    """Cluster each class separately, then fit the output layer against one-hot targets."""
    if centers_per_class < 1:
        raise DataError("centers_per_class must be >= 1")
    classes = np.unique(train.y)
    if len(classes) > len(train.y):
        raise DataError("more classes than samples")
    seeds = child_seeds(seed, len(classes))
    centers, widths, owner = [], [], []
    for c, s in zip(classes, seeds):
        members = train.X[train.y == c]
        k = min(centers_per_class, len(members))
        ctr, assign = kmeans(members, k, make_rng(s))
        centers.append(ctr)
        widths.append(cluster_widths(members, ctr, assign, width_rule, fill=False))
        owner.append(np.full(k, c, dtype=np.int64))
    centers = np.vstack(centers)
    # singleton clusters borrow the median width over every class
    widths = fill_lonely_widths(np.concatenate(widths), centers)
    A = activations(train.X, centers, widths)
    T = (train.y[:, None] == classes[None, :]).astype(np.float64)
    return RbfnnModel(classes, centers, widths, np.concatenate(owner), solve_output_weights(A, T))


def rbfnn_predict(model: RbfnnModel, X) -> np.ndarray:
    return model.predict(X)
