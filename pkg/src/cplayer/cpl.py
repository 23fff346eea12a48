"""Critical Points Layer (CPL) and Weighted CPL index computations.

Everything here is a pure function of its inputs. Selection indices are
integer arrays; the differentiable gather lives in :mod:`cplayer.nn`.

Tie rules (normative for this package):

* column argmax ties go to the smallest row index;
* the score sort is stable, so equal scores keep first-occurrence order;
* resizing uses ``out[i] = src[min(m - 1, floor(i * m / k))]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MODES = ("cpl", "wcpl")


@dataclass
class CriticalSelection:
    """Every intermediate of one CPL/WCPL pass over a feature matrix."""

    f_max: np.ndarray
    idx: np.ndarray
    uidx: np.ndarray
    f_s: np.ndarray
    fr: np.ndarray
    ordered: np.ndarray
    sorted_f_s: np.ndarray
    sorted_fr: np.ndarray
    resized: np.ndarray
    mode: str
    expanded: Optional[np.ndarray] = field(default=None)

    @property
    def k(self) -> int:
        return len(self.resized)

    @property
    def m(self) -> int:
        return len(self.uidx)

    def to_dict(self) -> dict:
        out = {"mode": self.mode.upper()}
        for name in ("f_max", "idx", "uidx", "f_s", "fr", "ordered", "resized", "expanded"):
            value = getattr(self, name)
            out[name] = None if value is None else value.tolist()
        return out

    def __eq__(self, other):
        if not isinstance(other, CriticalSelection):
            return NotImplemented
        if self.mode != other.mode:
            return False
        for name in ("f_max", "idx", "uidx", "f_s", "fr", "ordered", "sorted_f_s",
                     "sorted_fr", "resized", "expanded"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not (a.dtype == b.dtype and np.array_equal(a, b)):
                return False
        return True


def _as_features(F) -> np.ndarray:
    F = np.asarray(F)
    if F.ndim != 2 or F.shape[0] < 1 or F.shape[1] < 1:
        raise ValueError(f"feature matrix must be (n>=1, d>=1), got shape {F.shape}")
    if not np.issubdtype(F.dtype, np.floating):
        F = F.astype(np.float64)
    return F


_ARGMAX_BLOCK = 2048


def column_max_argmax(F_S) -> tuple[np.ndarray, np.ndarray]:
    """Column maxima and the first row attaining each.

    Works through row blocks so each transposed argmax stays in cache; a
    strict ``>`` across blocks keeps the smallest row on ties.
    """
    F_S = _as_features(F_S)
    n, d = F_S.shape
    cols = np.arange(d)
    idx = np.argmax(F_S[:_ARGMAX_BLOCK], axis=0)
    f_max = F_S[idx, cols]
    for start in range(_ARGMAX_BLOCK, n, _ARGMAX_BLOCK):
        block = F_S[start:start + _ARGMAX_BLOCK]
        local = np.argmax(block, axis=0)
        vals = block[local, cols]
        better = vals > f_max
        f_max = np.where(better, vals, f_max)
        idx = np.where(better, local + start, idx)
    if not np.all(np.isfinite(f_max)):
        raise ValueError("feature matrix has non-finite column maxima")
    return f_max, idx


def aggregate_unique(f_max, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct critical rows in first-occurrence order, their summed maxima and counts.

    Scores are accumulated in float64, in column order.
    """
    idx = np.asarray(idx)
    values, first, inverse = np.unique(idx, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    slot = rank[inverse.reshape(-1)]
    f_s = np.bincount(slot, weights=np.asarray(f_max, dtype=np.float64), minlength=len(values))
    fr = np.bincount(slot, minlength=len(values))
    return values[order], f_s, fr


def sort_by_score(uidx, f_s, fr):
    order = np.argsort(f_s, kind="stable")
    return np.asarray(uidx)[order], np.asarray(f_s)[order], np.asarray(fr)[order]


def nn_resize(src, k: int) -> np.ndarray:
    """Nearest-neighbour resize of an integer array to length ``k``."""
    src = np.asarray(src)
    m = len(src)
    if m < 1 or k < 1:
        raise ValueError("nn_resize needs a non-empty source and k >= 1")
    pos = np.minimum(m - 1, (np.arange(k, dtype=np.int64) * m) // k)
    return src[pos]


def weighted_expand(suidx, sorted_fr) -> np.ndarray:
    return np.repeat(np.asarray(suidx), np.asarray(sorted_fr))


def cpl_select(F_S, k: int, mode: str = "cpl") -> CriticalSelection:
    """Run the (weighted) critical points selection on ``F_S`` and resize to ``k`` indices."""
    mode = mode.lower()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    f_max, idx = column_max_argmax(F_S)
    uidx, f_s, fr = aggregate_unique(f_max, idx)
    suidx, sorted_f_s, sorted_fr = sort_by_score(uidx, f_s, fr)
    expanded = None
    if mode == "wcpl":
        expanded = weighted_expand(suidx, sorted_fr)
        resized = nn_resize(expanded, k)
    else:
        resized = nn_resize(suidx, k)
    return CriticalSelection(f_max=f_max, idx=idx, uidx=uidx, f_s=f_s, fr=fr, ordered=suidx,
                             sorted_f_s=sorted_f_s, sorted_fr=sorted_fr, resized=resized,
                             mode=mode, expanded=expanded)


def gather_rows(F_I, indices) -> np.ndarray:
    F_I = np.asarray(F_I)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= len(F_I)):
        raise IndexError(f"row index out of range for {len(F_I)} rows")
    return F_I[indices]


def output_max(F_O) -> np.ndarray:
    return np.asarray(F_O).max(axis=0)


def critical_points_layer(F_S, k: int, mode: str = "cpl", F_I=None):
    """Full layer: returns ``(F_O, f_O, indices)``. ``F_I`` defaults to ``F_S``."""
    sel = cpl_select(F_S, k, mode)
    F_O = gather_rows(F_S if F_I is None else F_I, sel.resized)
    return F_O, output_max(F_O), sel.resized


# ---------------------------------------------------------------------------
# baselines

def downsample_random(n: int, k: int, seed) -> np.ndarray:
    """``k`` row indices drawn without replacement (with replacement when ``k > n``)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.choice(n, size=k, replace=k > n)


def downsample_fps(points, k: int) -> np.ndarray:
    """Greedy farthest point sampling starting from row 0."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"fps needs 1 <= k <= n, got k={k}, n={n}")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = 0
    dist = ((points - points[0]) ** 2).sum(axis=1)
    dist[0] = -1.0  # never re-pick, even among duplicates
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        np.minimum(dist, ((points - points[nxt]) ** 2).sum(axis=1), out=dist)
        dist[nxt] = -1.0
    return chosen
