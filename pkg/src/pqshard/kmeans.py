"""Seeded Lloyd's k-means used by both quantizer trainers.

Kept in-tree rather than delegating to scipy/sklearn because the trainers
need behavior those implementations do not pin down: deterministic
k-means++ seeding, a fixed iteration cap, and reseeding empty clusters from
the point currently farthest from its centroid (which guarantees no empty
cluster survives training).
"""

from __future__ import annotations

import numpy as np

from .errors import TrainingError

DEFAULT_ITERS = 25


def _pairwise_sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x-c||^2 expanded so the inner product runs through BLAS; float64 to
    # keep argmin ties well behaved. Clamped: expansion can go slightly negative.
    p2 = np.einsum("ij,ij->i", points, points)[:, None]
    c2 = np.einsum("ij,ij->i", centroids, centroids)[None, :]
    d2 = p2 + c2 - 2.0 * (points @ centroids.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick k initial centroids with the classic d^2-weighted scheme."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = rng.integers(n)
    centroids[0] = points[first]
    min_d2 = np.einsum("ij,ij->i", points - centroids[0], points - centroids[0])
    for i in range(1, k):
        total = float(min_d2.sum())
        if total <= 0.0:
            # All remaining mass sits on already-chosen points; fall back to
            # uniform choice so we still return k centroids.
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(min_d2), r, side="right"))
            idx = min(idx, n - 1)
        centroids[i] = points[idx]
        diff = points - centroids[i]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
    return centroids


def _reseed_empty(
    centroids: np.ndarray,
    labels: np.ndarray,
    points: np.ndarray,
    counts: np.ndarray,
) -> bool:
    """Move each empty cluster onto the point farthest from its centroid."""
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return False
    diff = points - centroids[labels]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for c in empty:
        j = int(np.argmax(d2))
        centroids[c] = points[j]
        labels[j] = c
        d2[j] = 0.0
    return True


def lloyd(
    points: np.ndarray,
    k: int,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
) -> tuple[np.ndarray, list[float]]:
    """Run capped Lloyd iterations; returns (centroids, per-iteration WCSS).

    Deterministic for a fixed seed. WCSS is accumulated in float64 and is
    non-increasing across iterations (up to float noise).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise TrainingError(f"need at least {k} training points, got {n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    centroids = kmeans_plus_plus(points, k, rng)
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max(1, iters)):
        d2 = _pairwise_sq_dists(points, centroids)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=k)
        _reseed_empty(centroids, labels, points, counts)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros((k, points.shape[1]), dtype=np.float64)
        np.add.at(sums, labels, points)
        centroids = sums / counts[:, None]
        diff = points - centroids[labels]
        history.append(float(np.einsum("ij,ij->i", diff, diff).sum()))
    # The means may have drifted off some cluster entirely; patch any empties
    # so every centroid owns at least one point after a final assignment.
    for _ in range(k):
        labels = np.argmin(_pairwise_sq_dists(points, centroids), axis=1)
        counts = np.bincount(labels, minlength=k)
        if not _reseed_empty(centroids, labels, points, counts):
            break
    else:
        raise TrainingError("could not populate every cluster while reseeding")
    return centroids, history
