"""RBF-kernel support vector machine: SMO binary solver, one-vs-one voting, k-fold grid search.

The binary solver minimises ``0.5 a^T Q a - sum(a)`` subject to
``0 <= a_i <= C`` and ``y^T a = 0`` with ``Q_ij = y_i y_j K(x_i, x_j)`` and
``K(x, z) = exp(-gamma ||x - z||^2)``.  Each step updates the maximal
violating pair and the solver stops once the KKT gap ``m(a) - M(a)`` drops
to ``tol``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numba
import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DataError
from ..seeding import rng as make_rng
from .common import TrainingSet, as_features, vote
from .modelio import pack, unpack

KKT_TOL = 1e-3
KERNEL_EVAL_CAP = 10**6
DEFAULT_C_GRID = tuple(2.0**p for p in range(-2, 11, 2))
DEFAULT_GAMMA_GRID = tuple(2.0**p for p in range(-10, 3, 2))
_TAU = 1e-12


class ConvergenceWarning(RuntimeWarning):
    pass


@numba.njit(cache=True, nogil=True)
def _smo(K, y, C, tol, max_iter):
    """Returns ``(alpha, rho, iterations, gap)``; decision is ``sum(alpha y K) - rho``."""
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    gap = np.inf
    while True:
        # maximal violating pair
        i = -1
        j = -1
        gmax = -np.inf
        gmin = np.inf
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin:
                    gmin = v
                    j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap <= tol or it >= max_iter:
            break
        it += 1
        qij = y[i] * y[j] * K[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] + 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = alpha[i] - ai_old
        dj = alpha[j] - aj_old
        for t in range(n):
            grad[t] += y[t] * (y[i] * K[t, i] * di + y[j] * K[t, j] * dj)
    # bias from free vectors, else midpoint of the feasible interval
    free_sum = 0.0
    n_free = 0
    ub = np.inf
    lb = -np.inf
    for t in range(n):
        yg = y[t] * grad[t]
        if 0 < alpha[t] < C:
            free_sum += yg
            n_free += 1
        elif (alpha[t] >= C and y[t] < 0) or (alpha[t] <= 0 and y[t] > 0):
            ub = min(ub, yg)
        else:
            lb = max(lb, yg)
    if n_free > 0:
        rho = free_sum / n_free
    else:
        rho = (ub + lb) / 2.0
    return alpha, rho, it, gap


def rbf_kernel(x: np.ndarray, z: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(x, z, "sqeuclidean"))


@dataclass
class BinaryMachine:
    positive: int
    negative: int
    alpha: np.ndarray
    rho: float
    converged: bool
    iterations: int


def train_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float = KKT_TOL) -> tuple[np.ndarray, float, bool, int]:
    """SMO on a precomputed kernel with labels in {+1, -1}."""
    n = len(y)
    max_iter = max(KERNEL_EVAL_CAP // (2 * n), 1)
    alpha, rho, it, gap = _smo(np.ascontiguousarray(K), y.astype(np.float64), float(C), tol, max_iter)
    return alpha, float(rho), bool(gap <= tol), int(it)


def _ovo(K, y, classes, C, threads=1):
    """One binary machine per class pair on the rows of ``K``; positive class is the smaller id."""
    pairs = list(combinations(range(len(classes)), 2))

    def one(pair):
        a, b = pair
        idx = np.flatnonzero((y == classes[a]) | (y == classes[b]))
        yy = np.where(y[idx] == classes[a], 1.0, -1.0)
        alpha, rho, ok, it = train_binary(K[np.ix_(idx, idx)], yy, C)
        return idx, yy, alpha, rho, ok, it

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return pairs, list(pool.map(one, pairs))
    return pairs, [one(p) for p in pairs]


@dataclass(frozen=True, eq=False)
class SvmModel:
    """One-vs-one machines sharing a pooled support-vector matrix.

    ``dual_coef[p, s]`` holds ``alpha * y`` of support vector ``s`` in pair
    ``p`` (0 where the vector is not used by that pair).
    """

    classes: np.ndarray
    pairs: np.ndarray  # (P, 2) indices into classes; first is the +1 side
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    rho: np.ndarray
    gamma: float
    C: float
    converged: np.ndarray = field(default=None)
    cv_accuracy: float = float("nan")

    def decision_function(self, X) -> np.ndarray:
        X = as_features(X, self.support_vectors.shape[1])
        out = np.empty((len(X), len(self.rho)))
        for start in range(0, len(X), 4096):
            k = rbf_kernel(X[start:start + 4096], self.support_vectors, self.gamma)
            out[start:start + 4096] = k @ self.dual_coef.T - self.rho
        return out

    def predict(self, X) -> np.ndarray:
        dec = self.decision_function(X)
        counts = np.zeros((len(dec), len(self.classes)), dtype=np.int64)
        rows = np.arange(len(dec))
        for p, (a, b) in enumerate(self.pairs):
            winner = np.where(dec[:, p] > 0, a, b)
            np.add.at(counts, (rows, winner), 1)
        return vote(counts, self.classes)

    def to_arrays(self) -> dict:
        return {
            "classes": self.classes, "pairs": self.pairs, "support_vectors": self.support_vectors,
            "dual_coef": self.dual_coef, "rho": self.rho,
            "params": np.array([self.gamma, self.C, self.cv_accuracy]),
            "converged": self.converged.astype(np.int64),
        }

    @classmethod
    def from_arrays(cls, a: dict) -> "SvmModel":
        gamma, C, cv = a["params"]
        return cls(a["classes"], a["pairs"], a["support_vectors"], a["dual_coef"], a["rho"],
                   float(gamma), float(C), a["converged"].astype(bool), float(cv))

    def to_bytes(self) -> bytes:
        return pack("svm", self.to_arrays())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SvmModel":
        tag, arrays = unpack(blob)
        if tag != "svm":
            raise DataError(f"expected an svm model, got {tag}")
        return cls.from_arrays(arrays)


def fit_fixed(train: TrainingSet, C: float, gamma: float, threads: int = 1) -> SvmModel:
    """Train one-vs-one machines for a single ``(C, gamma)``."""
    classes = np.unique(train.y)
    if len(classes) < 2:
        raise DataError("SVM needs at least two classes")
    K = rbf_kernel(train.X, train.X, gamma)
    pairs, results = _ovo(K, train.y, classes, C, threads)
    used = np.zeros(len(train.y), dtype=bool)
    for idx, _, alpha, *_ in results:
        used[idx[alpha > 0]] = True
    sv_index = np.flatnonzero(used)
    position = np.full(len(train.y), -1)
    position[sv_index] = np.arange(len(sv_index))
    dual = np.zeros((len(pairs), len(sv_index)))
    rho = np.empty(len(pairs))
    converged = np.empty(len(pairs), dtype=bool)
    for p, (idx, yy, alpha, r, ok, _) in enumerate(results):
        nz = alpha > 0
        dual[p, position[idx[nz]]] = alpha[nz] * yy[nz]
        rho[p] = r
        converged[p] = ok
    if not converged.all():
        warnings.warn(f"SMO hit the iteration cap on {int((~converged).sum())} of {len(pairs)} class pairs; "
                      "returning the best iterate", ConvergenceWarning, stacklevel=2)
    return SvmModel(classes, np.array(pairs, dtype=np.int64), train.X[sv_index].copy(), dual, rho,
                    float(gamma), float(C), converged)


def make_folds(y: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Random folds; if any training part then lacks a class, deal each class round-robin instead."""
    n = len(y)
    gen = make_rng(seed)
    order = gen.permutation(n)
    parts = np.array_split(order, folds)
    classes = np.unique(y)
    if all(np.array_equal(np.unique(np.delete(y, p)), classes) for p in parts):
        return parts
    buckets = [[] for _ in range(folds)]
    offset = 0
    for c in classes:
        members = gen.permutation(np.flatnonzero(y == c))
        for k, i in enumerate(members):
            buckets[(offset + k) % folds].append(i)
        offset += len(members)
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def cross_validate(train: TrainingSet, C_grid, gamma_grid, folds: int = 5, seed: int = 0,
                   threads: int = 1) -> tuple[float, float, np.ndarray]:
    """Mean k-fold accuracy over the grid; returns ``(C, gamma, accuracy[C, gamma])``.

    Ties go to the smallest C, then the smallest gamma.
    """
    X, y = train.X, train.y
    if len(y) < folds:
        raise DataError(f"cross-validation needs at least {folds} samples, got {len(y)}")
    parts = make_folds(y, folds, seed)
    C_grid = sorted(float(c) for c in C_grid)
    gamma_grid = sorted(float(g) for g in gamma_grid)
    correct = np.zeros((len(C_grid), len(gamma_grid)))
    sqd = cdist(X, X, "sqeuclidean")
    for gi, gamma in enumerate(gamma_grid):
        K = np.exp(-gamma * sqd)
        for test in parts:
            fit = np.setdiff1d(np.arange(len(y)), test)
            classes = np.unique(y[fit])
            Kf = K[np.ix_(fit, fit)]
            Kt = K[np.ix_(test, fit)]
            for ci, C in enumerate(C_grid):
                pairs, results = _ovo(Kf, y[fit], classes, C, threads)
                counts = np.zeros((len(test), len(classes)), dtype=np.int64)
                rows = np.arange(len(test))
                for (a, b), (idx, yy, alpha, rho, _, _) in zip(pairs, results):
                    dec = Kt[:, idx] @ (alpha * yy) - rho
                    np.add.at(counts, (rows, np.where(dec > 0, a, b)), 1)
                correct[ci, gi] += np.sum(vote(counts, classes) == y[test])
    accuracy = correct / len(y)
    best = (0, 0)
    for ci in range(len(C_grid)):
        for gi in range(len(gamma_grid)):
            if accuracy[ci, gi] > accuracy[best]:
                best = (ci, gi)
    return C_grid[best[0]], gamma_grid[best[1]], accuracy


def svm_train(train: TrainingSet, C_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID, folds: int = 5,
              seed: int = 0, threads: int = 1) -> SvmModel:
    """Grid-search ``(C, gamma)`` by k-fold accuracy, then train on the full set.

    A single-point grid skips cross-validation.
    """
    if train.n_classes < 2:
        raise DataError("SVM needs at least two classes")
    if len(C_grid) * len(gamma_grid) == 1:
        return fit_fixed(train, C_grid[0], gamma_grid[0], threads)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        C, gamma, acc = cross_validate(train, C_grid, gamma_grid, folds, seed, threads)
    model = fit_fixed(train, C, gamma, threads)
    return SvmModel(model.classes, model.pairs, model.support_vectors, model.dual_coef, model.rho,
                    model.gamma, model.C, model.converged, float(acc.max()))


def svm_predict(model: SvmModel, X) -> np.ndarray:
    return model.predict(X)
