"""Random forest of unpruned CART trees (Gini impurity, bootstrap, per-node feature sampling)."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import DataError
from ..seeding import child_seeds, rng as make_rng
from .common import TrainingSet, as_features, vote
from .modelio import pack, unpack

DEFAULT_TREES = 200


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    A sample goes left when ``x[feature] <= threshold``.  ``votes`` holds the
    per-class bootstrap counts that reached each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    votes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaves(self, X: np.ndarray) -> np.ndarray:
        return _leaves(self.feature, self.threshold, self.left, self.right, np.ascontiguousarray(X, dtype=np.float64))

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        """Class index (into the forest's class list) per row; leaf ties go to the smallest id."""
        return np.argmax(self.votes, axis=1)[self.leaves(X)]


@numba.njit(cache=True, nogil=True)
def _grow(X, y, n_classes, mtry, keys):
    """Depth-first CART growth on rows ``0..n-1`` of ``X``.

    ``keys[node]`` holds random sort keys that fix the order in which
    features are tried at that node.  Returns the node arrays.
    """
    n, d = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    votes = np.zeros((cap, n_classes), np.int64)
    start = np.zeros(cap, np.int64)
    stop = np.zeros(cap, np.int64)
    rows = np.arange(n)
    scratch = np.empty(n, np.int64)
    lc = np.zeros(n_classes)
    for i in range(n):
        votes[0, y[i]] += 1
    stop[0] = n
    n_nodes = 1
    stack = np.empty(cap, np.int64)
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s, e = start[node], stop[node]
        m = e - s
        present = 0
        sq = 0.0
        for c in range(n_classes):
            if votes[node, c] > 0:
                present += 1
            sq += float(votes[node, c]) * votes[node, c]
        if m < 2 or present < 2:
            continue
        parent_gini = 1.0 - sq / (float(m) * m)
        order = np.argsort(keys[node], kind="mergesort")
        best_dec = -np.inf
        best_f = -1
        best_thr = 0.0
        seg = rows[s:e]
        for pos in range(d):
            if pos >= mtry and best_f >= 0:
                break
            f = order[pos]
            v = np.empty(m)
            for k in range(m):
                v[k] = X[seg[k], f]
            idx = np.argsort(v, kind="mergesort")
            lc[:] = 0.0
            f_dec = -np.inf
            f_thr = 0.0
            for k in range(m - 1):
                lc[y[seg[idx[k]]]] += 1.0
                lo = v[idx[k]]
                hi = v[idx[k + 1]]
                if lo == hi:
                    continue
                nl = float(k + 1)
                nr = float(m) - nl
                sl = 0.0
                sr = 0.0
                for c in range(n_classes):
                    sl += lc[c] * lc[c]
                    rc = votes[node, c] - lc[c]
                    sr += rc * rc
                weighted = (nl * (1.0 - sl / (nl * nl)) + nr * (1.0 - sr / (nr * nr))) / m
                dec = parent_gini - weighted
                if dec > f_dec:
                    f_dec = dec
                    thr = lo + (hi - lo) / 2.0
                    if not (lo <= thr and thr < hi):
                        thr = lo
                    f_thr = thr
            if f_dec > best_dec:
                best_dec = f_dec
                best_f = f
                best_thr = f_thr
        if best_f < 0:
            continue
        # stable partition of the node's rows
        nl_rows = 0
        for k in range(m):
            if X[seg[k], best_f] <= best_thr:
                scratch[nl_rows] = seg[k]
                nl_rows += 1
        j = nl_rows
        for k in range(m):
            if not X[seg[k], best_f] <= best_thr:
                scratch[j] = seg[k]
                j += 1
        for k in range(m):
            rows[s + k] = scratch[k]
        feature[node] = best_f
        threshold[node] = best_thr
        for child, a, b in ((n_nodes, s, s + nl_rows), (n_nodes + 1, s + nl_rows, e)):
            start[child] = a
            stop[child] = b
            for k in range(a, b):
                votes[child, y[rows[k]]] += 1
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[sp] = n_nodes + 1
        stack[sp + 1] = n_nodes
        sp += 2
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], votes[:n_nodes]


@numba.njit(cache=True, nogil=True)
def _leaves(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def grow_tree(X: np.ndarray, y_index: np.ndarray, n_classes: int, mtry: int, gen: np.random.Generator) -> Tree:
    """Grow until nodes are pure, hold fewer than two samples, or no feature can separate them.

    Each node tries ``mtry`` features in a random order, continuing through
    the remaining features only while none of the tried ones can split.
    The split maximises the Gini decrease; ties keep the earlier feature and
    the lower threshold.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    keys = gen.random((2 * len(X) + 1, X.shape[1]))
    return Tree(*_grow(X, np.asarray(y_index, dtype=np.int64), n_classes, mtry, keys))


@dataclass(frozen=True, eq=False)
class ForestModel:
    classes: np.ndarray
    trees: list
    seeds: np.ndarray
    n_features: int

    def tree_predictions(self, X) -> np.ndarray:
        """``(trees, n)`` class ids predicted by every tree."""
        X = as_features(X, self.n_features)
        return np.stack([self.classes[t.predict_index(X)] for t in self.trees])

    def vote_counts(self, X) -> np.ndarray:
        X = as_features(X, self.n_features)
        counts = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        rows = np.arange(len(X))
        for t in self.trees:
            np.add.at(counts, (rows, t.predict_index(X)), 1)
        return counts

    def predict(self, X) -> np.ndarray:
        return vote(self.vote_counts(X), self.classes)

    def to_arrays(self) -> dict:
        sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
        return {
            "classes": self.classes,
            "seeds": self.seeds.view(np.int64),
            "n_features": np.array([self.n_features]),
            "sizes": sizes,
            "feature": np.concatenate([t.feature for t in self.trees]),
            "threshold": np.concatenate([t.threshold for t in self.trees]),
            "left": np.concatenate([t.left for t in self.trees]),
            "right": np.concatenate([t.right for t in self.trees]),
            "votes": np.concatenate([t.votes for t in self.trees]),
        }

    @classmethod
    def from_arrays(cls, a: dict) -> "ForestModel":
        bounds = np.concatenate([[0], np.cumsum(a["sizes"])])
        trees = [
            Tree(*(a[k][s:e] for k in ("feature", "threshold", "left", "right", "votes")))
            for s, e in zip(bounds[:-1], bounds[1:])
        ]
        return cls(a["classes"], trees, a["seeds"].view(np.uint64), int(a["n_features"][0]))

    def to_bytes(self) -> bytes:
        return pack("rf", self.to_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ForestModel":
        tag, arrays = unpack(blob)
        if tag != "rf":
            raise DataError(f"expected an rf model, got {tag}")
        return cls.from_arrays(arrays)


def rf_train(train: TrainingSet, trees: int = DEFAULT_TREES, seed: int = 0, mtry: int | None = None,
             threads: int = 1) -> ForestModel:
    """Each tree draws its bootstrap and feature subsets from its own child seed of ``seed``."""
    if len(train.y) < 2:
        raise DataError("random forest needs at least two samples")
    if trees < 1:
        raise DataError("at least one tree is required")
    classes = np.unique(train.y)
    y_index = np.searchsorted(classes, train.y)
    d = train.X.shape[1]
    mtry = math.ceil(math.sqrt(d)) if mtry is None else int(mtry)
    seeds = np.array(child_seeds(seed, trees), dtype=np.uint64)

    def one(s):
        gen = make_rng(int(s))
        boot = gen.integers(0, len(y_index), len(y_index))
        return grow_tree(train.X[boot], y_index[boot], len(classes), mtry, gen)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grown = list(pool.map(one, seeds))
    else:
        grown = [one(s) for s in seeds]
    return ForestModel(classes, grown, seeds, d)


def rf_predict(model: ForestModel, X) -> np.ndarray:
    return model.predict(X)
