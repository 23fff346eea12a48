"""Exact brute-force k-nearest-neighbour graphs."""
from __future__ import annotations

import numpy as np


class KTooLarge(ValueError):
    pass


def _select(d: np.ndarray, K: int) -> np.ndarray:
    """K smallest entries per row of ``d`` ordered by (distance, column index)."""
    kth = np.partition(d, K - 1, axis=-1)[..., K - 1:K]
    less = d < kth
    need = K - less.sum(axis=-1, keepdims=True)
    # entries tied with the K-th distance fill the remaining slots in index order
    equal = d == kth
    rank = np.cumsum(equal, axis=-1, dtype=np.int16 if d.shape[-1] < 32767 else np.int64)
    take = less | (equal & (rank <= need))
    cols = np.nonzero(take)[-1].reshape(d.shape[:-1] + (K,))  # ascending column order
    order = np.argsort(np.take_along_axis(d, cols, axis=-1), axis=-1, kind="stable")
    return np.take_along_axis(cols, order, axis=-1)


def _knn_rows(points: np.ndarray, rows: slice, K: int) -> np.ndarray:
    # explicit differences keep each entry independent of row order
    block = points[..., rows, :]
    d = None
    for c in range(points.shape[-1]):
        t = block[..., :, None, c] - points[..., None, :, c]
        np.square(t, out=t)
        d = t if d is None else np.add(d, t, out=d)
    local = np.arange(d.shape[-2])
    d[..., local, local + rows.start] = np.inf
    return _select(d, K)


def knn_batch(points, K: int, chunk: int = 256) -> np.ndarray:
    """Neighbour lists ``(..., n, d) -> (..., n, K)``, self excluded.

    Squared Euclidean distance; ties go to the smaller index so duplicated
    points are handled deterministically.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[-2]
    if not 1 <= K < n:
        raise KTooLarge(f"K={K} needs 1 <= K < n={n}")
    parts = [_knn_rows(points, slice(s, min(n, s + chunk)), K) for s in range(0, n, chunk)]
    return np.concatenate(parts, axis=-2)


def knn_build(points, K: int) -> np.ndarray:
    """``(n, K)`` neighbour indices for a single cloud ``(n, d)``."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("knn_build expects an (n, d) array")
    return knn_batch(points, K)
