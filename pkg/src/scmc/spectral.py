"""Spectral clustering on a learned affinity, with its own eigensolver and k-means."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

SYMMETRY_TOL = 1e-10
MAX_SWEEPS = 100
DEGREE_FLOOR = 1e-12
LAPLACIANS = ("sym", "unnormalized")

Seed = Union[int, np.random.Generator, None]


class SpectralError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class EigenPairs:
    values: np.ndarray   # ascending
    vectors: np.ndarray  # columns are eigenvectors


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    inertia: float = float("nan")
    centers: Optional[np.ndarray] = None


def symmetrize(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    return 0.5 * (A + A.T)


@njit(cache=True)
def _jacobi_sweeps(a, v, max_sweeps, tol):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off <= tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return -1


def eig_sym(S: np.ndarray, max_sweeps: int = MAX_SWEEPS) -> EigenPairs:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise SpectralError(f"eig_sym needs a square matrix, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))
    if np.max(np.abs(S - S.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise SpectralError("eig_sym: input is not symmetric")
    n = S.shape[0]
    a = np.array(0.5 * (S + S.T), order="C")
    vecs = np.eye(n)
    # stop once the off-diagonal mass is at rounding level of ||S||_F
    tol = (1e-12 * max(np.linalg.norm(S), 1e-300)) ** 2
    sweeps = _jacobi_sweeps(a, vecs, max_sweeps, tol)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    vals = np.diagonal(a).copy()
    order = np.argsort(vals, kind="stable")
    return EigenPairs(vals[order], vecs[:, order])


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _sq_dists(points, centers):
    d = (np.einsum("ij,ij->i", points, points)[:, None]
         - 2.0 * points @ centers.T
         + np.einsum("ij,ij->i", centers, centers)[None, :])
    return np.maximum(d, 0.0)


def _plusplus(points, c, rng):
    n = points.shape[0]
    centers = np.empty((c, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for k in range(1, c):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[k] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[k:k + 1])[:, 0])
    return centers


def _lloyd(points, centers, max_iter):
    labels = None
    for _ in range(max_iter):
        d = _sq_dists(points, centers)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(centers.shape[0]):
            members = labels == k
            if members.any():
                centers[k] = points[members].mean(axis=0)
            else:
                # empty cluster: move it to the point worst served by its centre
                worst = int(np.argmax(d[np.arange(len(labels)), labels]))
                centers[k] = points[worst]
    d = _sq_dists(points, centers)
    labels = np.argmin(d, axis=1)
    inertia = float(np.sum((points - centers[labels]) ** 2))
    return labels, inertia


def kmeans(points: np.ndarray, c: int, seed: Seed = 0, restarts: int = 10,
           max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeds; keep the lowest-WCSS restart."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= c <= n:
        raise SpectralError(f"kmeans: need 1 <= c <= N, got c={c}, N={n}")
    rng = _rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        centers = _plusplus(points, c, rng)
        labels, inertia = _lloyd(points, centers, max_iter)
        if best is None or inertia < best.inertia:
            final_centers = np.array([points[labels == k].mean(axis=0) if np.any(labels == k)
                                      else centers[k] for k in range(c)])
            best = ClusterAssignment(labels.astype(np.int64), inertia, final_centers)
    return best


def wcss(points: np.ndarray, labels: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    total = 0.0
    for k in np.unique(labels):
        members = points[labels == k]
        total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def spectral_embedding(A: np.ndarray, c: int, laplacian: str = "sym") -> np.ndarray:
    S = symmetrize(A)
    n = S.shape[0]
    if not 1 <= c <= n:
        raise SpectralError(f"need 1 <= c <= N, got c={c}, N={n}")
    deg = S.sum(axis=1)
    if np.any(deg <= 0.0):
        warnings.warn(f"{int(np.sum(deg <= 0))} isolated vertices; degree floored at "
                      f"{DEGREE_FLOOR}", RuntimeWarning, stacklevel=2)
        deg = np.maximum(deg, DEGREE_FLOOR)
    if laplacian == "sym":
        inv_sqrt = 1.0 / np.sqrt(deg)
        L = np.eye(n) - inv_sqrt[:, None] * S * inv_sqrt[None, :]
    elif laplacian == "unnormalized":
        L = np.diag(deg) - S
    else:
        raise SpectralError(f"unknown laplacian {laplacian!r}")
    L = 0.5 * (L + L.T)
    U = eig_sym(L).vectors[:, :c]
    if laplacian == "sym":
        norms = np.linalg.norm(U, axis=1)
        live = norms > 0
        U = U.copy()
        U[live] /= norms[live, None]
    return U


def spectral_clustering(A: np.ndarray, c: int, seed: Seed = 0, laplacian: str = "sym",
                        restarts: int = 10) -> ClusterAssignment:
    """Cluster on the symmetrized affinity (A + A^T) / 2.

    Normalized symmetric Laplacian with row-normalized eigenvector embedding
    by default; ``laplacian="unnormalized"`` uses L = D - S.
    """
    U = spectral_embedding(A, c, laplacian)
    return kmeans(U, c, seed=seed, restarts=restarts)


def knn_cosine_affinity(X: np.ndarray, k: int = 10) -> np.ndarray:
    """Symmetric k-nearest-neighbour graph weighted by (clipped) cosine similarity."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    norms[norms == 0] = 1.0
    U = X / norms[:, None]
    sim = U @ U.T
    np.fill_diagonal(sim, -np.inf)
    n = X.shape[0]
    k = min(k, n - 1)
    idx = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    W = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    W[rows, idx.ravel()] = np.maximum(sim[rows, idx.ravel()], 0.0)
    return np.maximum(W, W.T)
