"""Kernel PCA with a Gaussian kernel fitted on a random pixel sample.

The kernel is ``exp(-||x - y||^2 / (2 sigma^2))`` with ``sigma`` defaulting
to the mean pairwise Euclidean distance between the sampled spectra.  The
centred kernel matrix is diagonalised with a cyclic Jacobi solver; the number
of retained components is the smallest ``q`` whose leading (non-negative)
eigenvalues reach the requested share of the total.  Projections are centred
consistently with the fit and scaled so that every retained component has
unit (population) variance over the training sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DataError, NumericError
from .raster import RasterGrid
from .seeding import rng as make_rng

DEFAULT_SAMPLES = 500
DEFAULT_VARIANCE = 0.95
JACOBI_TOL = 1e-10
_NEGATIVE_TOL = 1e-8


@numba.njit(cache=True, nogil=True)
def _jacobi(a, tol, max_sweeps):
    """Cyclic Jacobi on a symmetric matrix (modified in place).

    Stops once the off-diagonal Frobenius norm is <= ``tol`` times the
    matrix's Frobenius norm.  Returns ``(diagonal, rotations, sweeps, off)``.
    """
    m = a.shape[0]
    vt = np.eye(m)
    norm = 0.0
    for i in range(m):
        for j in range(m):
            norm += a[i, j] * a[i, j]
    norm = np.sqrt(norm)
    sweeps = 0
    off = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(m):
            for j in range(i + 1, m):
                off += 2.0 * a[i, j] * a[i, j]
        off = np.sqrt(off)
        if off <= tol * norm:
            break
        sweeps += 1
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(m):
                    if k == p or k == q:
                        continue
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(m):
                    a[k, p] = a[p, k]
                    a[k, q] = a[q, k]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                # rows of vt are eigenvectors
                for k in range(m):
                    vpk = vt[p, k]
                    vqk = vt[q, k]
                    vt[p, k] = c * vpk - s * vqk
                    vt[q, k] = s * vpk + c * vqk
    diag = np.empty(m)
    for i in range(m):
        diag[i] = a[i, i]
    return diag, vt.T.copy(), sweeps, off / norm if norm > 0 else 0.0


def symmetric_eigh(matrix: np.ndarray, solver: str = "jacobi") -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in non-increasing order and matching orthonormal eigenvector columns."""
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError("eigendecomposition needs a square matrix")
    if solver == "jacobi":
        values, vectors, _, residual = _jacobi(a, JACOBI_TOL, 100)
        if residual > JACOBI_TOL:
            raise NumericError(f"Jacobi eigensolver did not converge (relative off-diagonal {residual:.3g})")
    elif solver == "lapack":
        values, vectors = np.linalg.eigh(a)
    else:
        raise DataError(f"unknown eigensolver {solver!r}")
    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def estimate_gamma(samples: np.ndarray) -> float:
    """Mean Euclidean distance over all unordered pairs of distinct samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) < 2:
        raise DataError("gamma estimation needs at least two samples")
    gamma = float(np.mean(pdist(samples)))
    if gamma == 0:
        raise NumericError("all samples are identical; the Gaussian kernel would be degenerate")
    return gamma


def gaussian_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * gamma * gamma))


def select_components(eigenvalues: np.ndarray, variance: float = DEFAULT_VARIANCE) -> int:
    """Smallest ``q`` whose leading clamped eigenvalues reach ``variance`` of the clamped total."""
    clamped = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    total = clamped.sum()
    if total <= 0:
        raise NumericError("centred kernel matrix has no positive eigenvalue")
    share = np.cumsum(clamped) / total
    return int(np.searchsorted(share >= variance, True) + 1)


@dataclass(frozen=True, eq=False)
class KernelModel:
    samples: np.ndarray
    gamma: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kept: int
    row_means: np.ndarray
    total_mean: float

    @property
    def explained(self) -> float:
        clamped = np.maximum(self.eigenvalues, 0.0)
        return float(clamped[: self.kept].sum() / clamped.sum())


def centered_kernel(kernel: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    row_means = kernel.mean(axis=0)
    total = float(kernel.mean())
    centered = kernel - row_means[np.newaxis, :] - row_means[:, np.newaxis] + total
    return (centered + centered.T) / 2.0, row_means, total


def fit_kpca(
    samples: np.ndarray,
    gamma: float | None = None,
    variance: float = DEFAULT_VARIANCE,
    solver: str = "jacobi",
) -> KernelModel:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) < 2:
        raise DataError("KPCA needs at least two samples")
    if gamma is None:
        gamma = estimate_gamma(samples)
    if not gamma > 0:
        raise DataError("gamma must be positive")
    kernel = gaussian_kernel(samples, samples, gamma)
    if not np.all(np.isfinite(kernel)):
        raise NumericError("kernel matrix has non-finite entries")
    centered, row_means, total = centered_kernel(kernel)
    eigenvalues, eigenvectors = symmetric_eigh(centered, solver)
    kept = select_components(eigenvalues, variance)
    return KernelModel(samples, float(gamma), eigenvalues, eigenvectors, kept, row_means, total)


def project(model: KernelModel, pixels: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """``(n, kept)`` projections of ``pixels`` onto the retained components."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != model.samples.shape[1]:
        raise DataError(
            f"pixels have {pixels.shape[-1]} features; model was fitted on {model.samples.shape[1]}"
        )
    lam = model.eigenvalues[: model.kept]
    positive = lam > _NEGATIVE_TOL * max(model.eigenvalues[0], 0.0)
    m = len(model.samples)
    coef = np.zeros((m, model.kept))
    coef[:, positive] = model.eigenvectors[:, : model.kept][:, positive] * (np.sqrt(m) / lam[positive])
    out = np.empty((len(pixels), model.kept))
    for start in range(0, len(pixels), chunk):
        k = gaussian_kernel(pixels[start:start + chunk], model.samples, model.gamma)
        k = k - model.row_means[np.newaxis, :] - k.mean(axis=1, keepdims=True) + model.total_mean
        out[start:start + chunk] = k @ coef
    return out


def sample_pixels(grid: RasterGrid, count: int, seed: int) -> np.ndarray:
    """Spectra of ``count`` pixels drawn uniformly without replacement from the valid pixels."""
    valid = np.flatnonzero(grid.valid_mask())
    if valid.size < 2:
        raise DataError("fewer than two valid pixels to sample from")
    chosen = make_rng(seed).choice(valid, size=min(count, valid.size), replace=False)
    return grid.data.reshape(grid.bands, -1)[:, chosen].T.astype(np.float64)


def kpca_features(
    grid: RasterGrid,
    samples: int = DEFAULT_SAMPLES,
    variance: float = DEFAULT_VARIANCE,
    seed: int = 0,
    gamma: float | None = None,
    solver: str = "jacobi",
) -> tuple[RasterGrid, KernelModel]:
    """Fit on a random pixel sample and project every valid pixel."""
    model = fit_kpca(sample_pixels(grid, samples, seed), gamma, variance, solver)
    valid = grid.valid_mask().ravel()
    flat = grid.data.reshape(grid.bands, -1).T
    out = np.full((flat.shape[0], model.kept), grid.nodata, dtype=np.float64)
    out[valid] = project(model, flat[valid])
    data = out.T.reshape(model.kept, grid.rows, grid.cols)
    names = ",".join(f"kpca{i + 1}" for i in range(model.kept))
    return grid.with_data(data, metadata={"band_names": names, "kpca_gamma": repr(model.gamma),
                                          "kpca_explained": repr(model.explained)}), model
