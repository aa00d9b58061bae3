"""Numerical clustering stack: PCA, k-means, Gaussian mixture EM, spectral embedding.

Everything here is deterministic for a fixed :class:`~hierlearn.core.RngSeed`:
restarts use derived substreams, eigenvector signs follow a fixed convention,
and every tie breaks toward the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import RngSeed

__all__ = [
    "CovarianceCollapseError",
    "PcaModel",
    "pca_fit",
    "pca_transform",
    "pca_inverse_transform",
    "KMeansResult",
    "kmeans",
    "GaussianMixture",
    "gmm_fit",
    "GmmSelection",
    "gmm_select_c",
    "free_parameter_count",
    "Embedding",
    "spectral_embed",
]

COVARIANCE_MODES = ("spherical", "diagonal", "full", "tied")
_MODE_ALIASES = {"diag": "diagonal", "tied-full": "tied", "tied_full": "tied"}

# Added to covariance diagonals each M-step, scaled by trace/r; keeps
# mixtures positive definite when components see few points.
COVARIANCE_REG = 1e-6

_LOG_2PI = math.log(2.0 * math.pi)


class CovarianceCollapseError(RuntimeError):
    """EM produced a non-finite likelihood: a component covariance collapsed."""


def _canonical_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in COVARIANCE_MODES:
        raise ValueError(f"unknown covariance mode {mode!r}; expected one of {COVARIANCE_MODES}")
    return mode


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("points must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain non-finite values")
    return X


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Affine projection onto the top principal axes of the training sample."""

    mean: np.ndarray
    components: np.ndarray  # (d, r), orthonormal columns
    explained_variances: np.ndarray  # (r,), nonincreasing

    @property
    def r(self) -> int:
        return self.components.shape[1]


def pca_fit(points, r: int) -> PcaModel:
    """Fit the top-r principal axes of the centered sample covariance.

    Component signs are fixed so each axis' largest-magnitude coordinate is
    positive, making the model reproducible across runs.
    """
    X = _as_points(points)
    m, d = X.shape
    if m < 2:
        raise ValueError("PCA needs at least 2 points")
    if not 1 <= r <= min(m - 1, d):
        raise ValueError(f"target dimension r={r} must lie in [1, min(m-1, d)] = [1, {min(m - 1, d)}]")
    mean = X.mean(axis=0)
    centered = X - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    variances = singular**2 / (m - 1)
    if variances[0] == 0.0:
        raise ValueError("zero variance: all points are identical")
    components = vt[:r].T.copy()
    for j in range(r):
        col = components[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            components[:, j] = -col
    return PcaModel(mean=mean, components=components, explained_variances=variances[:r].copy())


def pca_transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (X - model.mean) @ model.components


def pca_inverse_transform(model: PcaModel, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    return Z @ model.components.T + model.mean


# ---------------------------------------------------------------------------
# k-means


class KMeansResult(NamedTuple):
    labels: np.ndarray
    centers: np.ndarray
    wcss_path: tuple[float, ...]


def _nearest(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # squared distances to every center; argmin breaks ties to the lowest index
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def _kmeans_pp_centers(X: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, c):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(m, p=d2 / total))
        else:
            idx = int(rng.integers(m))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans(points, c: int, seed: RngSeed, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a k-means++ start, run to an assignment fixpoint.

    Returns the partition, final centers, and the within-cluster
    sum-of-squares after initialization and after each iteration (the path is
    nonincreasing).
    """
    X = _as_points(points)
    m = X.shape[0]
    if not 1 <= c <= m:
        raise ValueError(f"cluster count c={c} must lie in [1, {m}]")
    rng = seed.generator()
    centers = _kmeans_pp_centers(X, c, rng)
    labels, d2 = _nearest(X, centers)
    wcss_path = [float(d2.sum())]
    for _ in range(max_iter):
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=c)
        for j in range(c):
            if counts[j] > 0:
                new_centers[j] = X[labels == j].mean(axis=0)
        # re-seed empty clusters at the point currently farthest from its center
        if np.any(counts == 0):
            steal = d2.copy()
            for j in np.flatnonzero(counts == 0):
                far = int(np.argmax(steal))
                new_centers[j] = X[far]
                steal[far] = 0.0
        new_labels, d2 = _nearest(X, new_centers)
        centers = new_centers
        wcss_path.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(labels=labels, centers=centers, wcss_path=tuple(wcss_path))


# ---------------------------------------------------------------------------
# Gaussian mixtures


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Fitted mixture: weights on the simplex, means, per-mode covariances.

    ``covariances`` holds (c,) variances for spherical, (c, r) for diagonal,
    (c, r, r) for full, and a single (r, r) matrix for tied.
    ``log_likelihood_trace`` is the training log-likelihood after each EM
    iteration of the winning restart.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    mode: str
    log_likelihood: float
    log_likelihood_trace: tuple[float, ...]

    @property
    def c(self) -> int:
        return self.means.shape[0]

    @property
    def r(self) -> int:
        return self.means.shape[1]


def _log_densities(X, means, covs, mode) -> np.ndarray:
    m, r = X.shape
    c = means.shape[0]
    out = np.empty((m, c))
    if mode == "spherical":
        for j in range(c):
            dev2 = ((X - means[j]) ** 2).sum(axis=1)
            out[:, j] = -0.5 * (r * _LOG_2PI + r * np.log(covs[j]) + dev2 / covs[j])
    elif mode == "diagonal":
        for j in range(c):
            dev = X - means[j]
            out[:, j] = -0.5 * (r * _LOG_2PI + np.log(covs[j]).sum() + (dev**2 / covs[j]).sum(axis=1))
    elif mode == "full":
        for j in range(c):
            out[:, j] = _log_density_full(X, means[j], covs[j])
    else:  # tied
        chol = np.linalg.cholesky(covs)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        for j in range(c):
            half = np.linalg.solve(chol, (X - means[j]).T)
            out[:, j] = -0.5 * (r * _LOG_2PI + logdet + (half**2).sum(axis=0))
    return out


def _log_density_full(X, mean, cov) -> np.ndarray:
    r = X.shape[1]
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    half = np.linalg.solve(chol, (X - mean).T)
    return -0.5 * (r * _LOG_2PI + logdet + (half**2).sum(axis=0))


def _regularize_full(cov: np.ndarray, r: int) -> np.ndarray:
    return cov + (COVARIANCE_REG * np.trace(cov) / r) * np.eye(r)


def _m_step(X, resp, mode):
    m, r = X.shape
    counts = resp.sum(axis=0)
    if np.any(counts <= 0):
        raise CovarianceCollapseError("a mixture component lost all responsibility")
    weights = counts / m
    means = (resp.T @ X) / counts[:, None]
    c = means.shape[0]
    if mode == "spherical":
        covs = np.empty(c)
        for j in range(c):
            dev2 = ((X - means[j]) ** 2).sum(axis=1)
            covs[j] = (resp[:, j] * dev2).sum() / (counts[j] * r)
        covs = covs * (1.0 + COVARIANCE_REG)
    elif mode == "diagonal":
        covs = np.empty((c, r))
        for j in range(c):
            dev = X - means[j]
            var = (resp[:, j][:, None] * dev**2).sum(axis=0) / counts[j]
            covs[j] = var + COVARIANCE_REG * var.sum() / r
    elif mode == "full":
        covs = np.empty((c, r, r))
        for j in range(c):
            dev = X - means[j]
            cov = (resp[:, j] * dev.T) @ dev / counts[j]
            covs[j] = _regularize_full(cov, r)
    else:  # tied
        pooled = np.zeros((r, r))
        for j in range(c):
            dev = X - means[j]
            pooled += (resp[:, j] * dev.T) @ dev
        covs = _regularize_full(pooled / m, r)
    return weights, means, covs


def _e_step(X, weights, means, covs, mode):
    log_dens = _log_densities(X, means, covs, mode)
    weighted = log_dens + np.log(weights)
    top = weighted.max(axis=1, keepdims=True)
    norm = top + np.log(np.exp(weighted - top).sum(axis=1, keepdims=True))
    log_likelihood = float(norm.sum())
    if not math.isfinite(log_likelihood):
        raise CovarianceCollapseError("non-finite likelihood after regularization")
    resp = np.exp(weighted - norm)
    return resp, log_likelihood


def _em_run(X, c, mode, init_labels, max_iter, tol):
    resp = np.zeros((X.shape[0], c))
    resp[np.arange(X.shape[0]), init_labels] = 1.0
    trace: list[float] = []
    log_likelihood = -np.inf
    for _ in range(max_iter):
        try:
            weights, means, covs = _m_step(X, resp, mode)
            resp, new_ll = _e_step(X, weights, means, covs, mode)
        except np.linalg.LinAlgError as exc:
            raise CovarianceCollapseError(str(exc)) from None
        trace.append(new_ll)
        if math.isfinite(log_likelihood) and abs(new_ll - log_likelihood) <= tol * max(1.0, abs(log_likelihood)):
            log_likelihood = new_ll
            break
        log_likelihood = new_ll
    return weights, means, covs, resp, trace


def gmm_fit(
    points,
    c: int,
    mode: str = "tied",
    restarts: int = 10,
    seed: RngSeed = RngSeed(0),
    max_iter: int = 200,
    tol: float = 1e-6,
) -> tuple[GaussianMixture, np.ndarray]:
    """Fit a c-component Gaussian mixture by EM, keeping the best of `restarts`.

    Each restart initializes responsibilities from the hard assignments of a
    k-means++ seeded Lloyd run on its own substream. Restarts whose
    covariances collapse are skipped; if every restart collapses a
    :class:`CovarianceCollapseError` is raised. The returned partition is the
    argmax responsibility per point, ties to the lowest component index.
    """
    X = _as_points(points)
    mode = _canonical_mode(mode)
    m = X.shape[0]
    if not 1 <= c <= m:
        raise ValueError(f"component count c={c} must lie in [1, {m}]")
    if restarts < 1:
        raise ValueError("need at least one restart")

    best = None
    for attempt in range(restarts):
        init_labels = kmeans(X, c, seed.child("restart", attempt)).labels
        try:
            result = _em_run(X, c, mode, init_labels, max_iter, tol)
        except CovarianceCollapseError:
            continue
        if best is None or result[4][-1] > best[4][-1]:
            best = result
    if best is None:
        raise CovarianceCollapseError(f"all {restarts} restarts collapsed (c={c}, mode={mode})")

    weights, means, covs, resp, trace = best
    mixture = GaussianMixture(
        weights=weights,
        means=means,
        covariances=covs,
        mode=mode,
        log_likelihood=trace[-1],
        log_likelihood_trace=tuple(trace),
    )
    return mixture, np.argmax(resp, axis=1)


def free_parameter_count(mode: str, c: int, r: int) -> int:
    """Free parameters of a c-component mixture in r dimensions."""
    mode = _canonical_mode(mode)
    cov_params = {
        "spherical": c,
        "diagonal": c * r,
        "full": c * r * (r + 1) // 2,
        "tied": r * (r + 1) // 2,
    }[mode]
    return (c - 1) + c * r + cov_params


class GmmSelection(NamedTuple):
    mixture: GaussianMixture
    labels: np.ndarray
    c: int
    bic_table: tuple[tuple[int, float, float], ...]  # (c, log_likelihood, bic)


def gmm_select_c(
    points,
    c_range: tuple[int, int],
    mode: str = "tied",
    restarts: int = 10,
    seed: RngSeed = RngSeed(0),
) -> GmmSelection:
    """Fit every component count in the inclusive range, keep the lowest BIC.

    BIC = -2 log L + p ln(m). Ties and equal scores resolve to the smallest
    component count. Counts where every restart collapses are recorded in the
    table with an infinite score and skipped.
    """
    X = _as_points(points)
    lo, hi = c_range
    if lo > hi:
        raise ValueError("empty component range")
    if not 1 <= lo <= hi <= X.shape[0]:
        raise ValueError(f"component range must lie within [1, {X.shape[0]}]")
    m = X.shape[0]
    table: list[tuple[int, float, float]] = []
    best = None
    for c in range(lo, hi + 1):
        try:
            mixture, labels = gmm_fit(X, c, mode=mode, restarts=restarts, seed=seed.child("select", c))
        except CovarianceCollapseError:
            table.append((c, -math.inf, math.inf))
            continue
        bic = -2.0 * mixture.log_likelihood + free_parameter_count(mixture.mode, c, X.shape[1]) * math.log(m)
        table.append((c, mixture.log_likelihood, bic))
        if best is None or bic < best[3]:
            best = (mixture, labels, c, bic)
    if best is None:
        raise CovarianceCollapseError("no component count in range produced a usable fit")
    return GmmSelection(mixture=best[0], labels=best[1], c=best[2], bic_table=tuple(table))


# ---------------------------------------------------------------------------
# Spectral embedding


@dataclass(frozen=True, eq=False)
class Embedding:
    """Points representing each class after adjacency spectral embedding."""

    coords: np.ndarray
    eigenvalues: np.ndarray

    @property
    def r(self) -> int:
        return self.coords.shape[1]


def spectral_embed(similarity, r: int) -> Embedding:
    """Adjacency spectral embedding of a symmetric similarity matrix.

    Coordinates are U_r |L_r|^(1/2) for the r largest-magnitude eigenpairs.
    Each eigenvector's sign is fixed so its largest-magnitude entry is
    positive; among equal magnitudes the original (ascending eigenvalue)
    order is kept.
    """
    S = getattr(similarity, "values", similarity)
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix contains non-finite values")
    if np.abs(S - S.T).max() > 1e-8:
        raise ValueError("similarity matrix must be symmetric")
    if S.min() < -1e-12 or S.max() > 1.0 + 1e-12:
        raise ValueError("similarity entries must lie in [0, 1]")
    k = S.shape[0]
    if not 1 <= r <= k:
        raise ValueError(f"embedding dimension r={r} must lie in [1, {k}]")

    eigenvalues, eigenvectors = np.linalg.eigh((S + S.T) / 2.0)
    order = np.argsort(-np.abs(eigenvalues), kind="stable")[:r]
    vectors = eigenvectors[:, order].copy()
    for j in range(r):
        col = vectors[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            vectors[:, j] = -col
    coords = vectors * np.sqrt(np.abs(eigenvalues[order]))
    return Embedding(coords=coords, eigenvalues=eigenvalues[order].copy())
