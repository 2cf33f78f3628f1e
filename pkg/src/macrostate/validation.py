"""Cluster validation: silhouettes, matched relative error and a k-means baseline."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ComponentCountMismatch, InvalidInput, SingleClusterInput

EXHAUSTIVE_MAX_M = 8
SILHOUETTE_CHUNK = 1024


def _points(items) -> np.ndarray:
    X = items.items if hasattr(items, "items") and not isinstance(items, dict) else items
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise InvalidInput("items must be a finite 2-D array")
    return X


@dataclass(frozen=True)
class SilhouetteReport:
    per_point: np.ndarray
    per_cluster_mean: np.ndarray
    overall_mean: float
    clusters: np.ndarray  # label value of each per_cluster_mean entry


def silhouette(items, labels) -> SilhouetteReport:
    """Euclidean silhouette ``s(i) = (b - a) / max(a, b)``; singletons score 0."""
    X = _points(items)
    labels = np.asarray(labels).ravel()
    if labels.size != X.shape[0]:
        raise InvalidInput("one label per item is required")
    clusters, inv = np.unique(labels, return_inverse=True)
    k = clusters.size
    if k < 2:
        raise SingleClusterInput("silhouette needs at least two clusters")
    sizes = np.bincount(inv, minlength=k).astype(float)
    n = X.shape[0]
    s = np.zeros(n)
    for lo in range(0, n, SILHOUETTE_CHUNK):
        hi = min(n, lo + SILHOUETTE_CHUNK)
        D = cdist(X[lo:hi], X)
        # distance sums from each row point to every cluster
        sums = np.zeros((hi - lo, k))
        for c in range(k):
            sums[:, c] = D[:, inv == c].sum(axis=1)
        own = inv[lo:hi]
        rows = np.arange(hi - lo)
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
        other = sums / sizes[None, :]
        other[rows, own] = np.inf
        b = other.min(axis=1)
        den = np.maximum(a, b)
        val = np.where(den > 0, (b - a) / np.where(den > 0, den, 1.0), 0.0)
        s[lo:hi] = np.where(own_size > 1, val, 0.0)
    per_cluster = np.array([s[inv == c].mean() for c in range(k)])
    return SilhouetteReport(per_point=s, per_cluster_mean=per_cluster,
                            overall_mean=float(s.mean()), clusters=clusters)


def _weighted(x) -> np.ndarray:
    if isinstance(x, tuple):
        a, F = x
        return np.asarray(F, dtype=float) * np.asarray(a, dtype=float)[None, :]
    if hasattr(x, "weighted_components"):
        return x.weighted_components()
    return np.asarray(x, dtype=float)


def match_components(estimated, truth) -> np.ndarray:
    """Permutation ``p`` minimising ``||est - truth[:, p]||_F``.

    Exhaustive search (first minimiser in lexicographic order) for up to
    eight components, optimal assignment above that.
    """
    E, T = _weighted(estimated), _weighted(truth)
    if E.shape != T.shape:
        raise ComponentCountMismatch(f"shapes {E.shape} and {T.shape} differ",
                                     estimated=list(E.shape), truth=list(T.shape))
    m = E.shape[1]
    cost = cdist(E.T, T.T, "sqeuclidean")  # cost[i, j]: estimated i vs truth j
    if m <= EXHAUSTIVE_MAX_M:
        best, best_p = np.inf, None
        for p in itertools.permutations(range(m)):
            c = cost[np.arange(m), p].sum()
            if c < best:
                best, best_p = c, p
        return np.array(best_p)
    _, cols = linear_sum_assignment(cost)
    return cols


def relative_error(estimated, truth) -> float:
    """``min_p ||A_est - A_truth[:, p]||_F / ||A_truth||_F`` over weighted components.

    Each argument is an ``(n, m)`` matrix whose columns are ``a_k f_k``, an
    ``(a, F)`` tuple, or a model exposing ``weighted_components()``.
    """
    E, T = _weighted(estimated), _weighted(truth)
    p = match_components(E, T)
    den = np.linalg.norm(T)
    if den == 0:
        raise InvalidInput("truth components are all zero")
    return float(np.linalg.norm(E - T[:, p]) / den)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    wcss: float
    history: list  # WCSS after every Lloyd iteration of the chosen restart
    restart: int


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        if tot > 0:
            j = int(rng.choice(n, p=d2 / tot))
        else:
            free = np.setdiff1d(np.arange(n), idx)
            j = int(free[rng.integers(free.size)])
        idx.append(j)
        d2 = np.minimum(d2, np.sum((X - X[j]) ** 2, axis=1))
    return X[idx].copy()


def _lloyd(X, centers, max_iter):
    history = []
    labels = None
    for _ in range(max_iter):
        D = cdist(X, centers, "sqeuclidean")
        new = np.argmin(D, axis=1)
        wcss = float(D[np.arange(X.shape[0]), new].sum())
        history.append(wcss)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                # empty cluster: re-seed at the point farthest from its centre
                far = int(np.argmax(D[np.arange(X.shape[0]), labels]))
                centers[c] = X[far]
                labels = labels.copy()
                labels[far] = c
    D = cdist(X, centers, "sqeuclidean")
    labels = np.argmin(D, axis=1)
    wcss = float(D[np.arange(X.shape[0]), labels].sum())
    if not history or wcss < history[-1]:
        history.append(wcss)
    return labels, centers, wcss, history


def kmeans(items, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts by WCSS."""
    X = _points(items)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise InvalidInput(f"k must lie in [1, {n}]")
    if n_init < 1:
        raise InvalidInput("n_init must be at least 1")
    rng = np.random.default_rng(seed)
    best = None
    for r in range(n_init):
        labels, centers, wcss, hist = _lloyd(X, _kmeanspp(X, k, rng), max_iter)
        if best is None or wcss < best.wcss:
            best = KMeansResult(labels=labels, centers=centers, wcss=wcss, history=hist, restart=r)
    return best


def kmeans_baseline(items, k: int, seed: int = 0, n_init: int = 10) -> np.ndarray:
    return kmeans(items, k, seed=seed, n_init=n_init).labels
