"""Seeded k-means (k-means++ init, Lloyd iterations) shared by both codecs."""

from __future__ import annotations

import numpy as np


def nearest_center(
    points: np.ndarray,
    centers: np.ndarray,
    exact: bool = True,
    chunk: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Assign each point to its nearest center (ties to the smallest index).

    Returns (assignments, squared distances). `exact=True` computes plain
    squared differences, which is what the brute-force test oracles compute;
    `exact=False` uses the |p|^2 - 2 p.c + |c|^2 expansion (faster for wide
    dimensions, adequate for codebook training).
    """
    points = np.asarray(points, dtype=float)
    centers = np.asarray(centers, dtype=float)
    n, d = points.shape
    k = centers.shape[0]
    if chunk is None:
        chunk = max(1, int(8_000_000 / max(1, k * d)))
    out_a = np.empty(n, dtype=np.int64)
    out_d = np.empty(n, dtype=float)
    if not exact:
        c2 = (centers * centers).sum(axis=1)
    for lo in range(0, n, chunk):
        p = points[lo : lo + chunk]
        if exact:
            d2 = ((p[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        else:
            d2 = (p * p).sum(axis=1)[:, None] - 2.0 * (p @ centers.T) + c2[None, :]
        a = d2.argmin(axis=1)
        out_a[lo : lo + chunk] = a
        out_d[lo : lo + chunk] = d2[np.arange(len(p)), a]
    return out_a, out_d


def _plusplus_init(points, k, rng, exact):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=float)
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_fit(
    points: np.ndarray,
    k: int,
    iters: int,
    rng: np.random.Generator,
    exact: bool = True,
) -> np.ndarray:
    """Fit k centers with k-means++ init and at most `iters` Lloyd iterations.

    Empty clusters are re-seeded to the point farthest from its current
    center (successively, so multiple empties take distinct points). Fully
    deterministic given the generator state.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    centers = _plusplus_init(points, k, rng, exact)
    prev = None
    for _ in range(iters):
        a, d2 = nearest_center(points, centers, exact=exact)
        counts = np.bincount(a, minlength=k)
        for j in np.flatnonzero(counts == 0):
            idx = int(np.argmax(d2))
            counts[a[idx]] -= 1
            a[idx] = j
            counts[j] = 1
            d2[idx] = 0.0
            centers[j] = points[idx]
        if prev is not None and np.array_equal(a, prev):
            break
        onehot = np.zeros((n, k))
        onehot[np.arange(n), a] = 1.0
        centers = (onehot.T @ points) / counts[:, None]
        prev = a
    return centers
