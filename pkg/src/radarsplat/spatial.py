"""Exact neighbor queries. A kd-tree backs large sets, brute force small ones.

Both paths return identical answers: candidate distances are always
recomputed with the same numpy expression, and ties resolve to the lowest
index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

BRUTE_FORCE_BELOW = 64
_TIE_CANDIDATES = 8


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def point_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance, the single expression used for every answer."""
    return np.sqrt(((a - b) ** 2).sum(-1))


def nearest(src: np.ndarray, tgt: np.ndarray, tree: cKDTree | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Nearest target index and distance for every source point."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    tgt = np.asarray(tgt, dtype=float).reshape(-1, 3)
    if len(tgt) < BRUTE_FORCE_BELOW:
        d = pairwise_distances(src, tgt)
        idx = np.argmin(d, axis=1)  # first minimum, i.e. lowest index
        return idx, d[np.arange(len(src)), idx]
    if tree is None:
        tree = cKDTree(tgt)
    k = min(_TIE_CANDIDATES, len(tgt))
    _, cand = tree.query(src, k=k)
    cand = cand.reshape(len(src), k)
    d = point_distances(src[:, None, :], tgt[cand])
    # lexicographic (distance, index) minimum over the candidates
    order = np.lexsort((cand, d), axis=1)[:, 0]
    rows = np.arange(len(src))
    idx = cand[rows, order]
    dist = d[rows, order]
    # every candidate ties with the minimum: more ties may lie outside the k fetched
    if k < len(tgt):
        for i in np.flatnonzero(d.max(1) <= dist):
            ball = np.asarray(tree.query_ball_point(src[i], dist[i] * (1 + 1e-9) + 1e-12), dtype=np.int64)
            db = point_distances(tgt[ball], src[i])
            ball = ball[db == dist[i]]
            idx[i] = ball.min()
    return idx, dist


def farthest(src: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Farthest target index (lowest index on ties) and distance for each source point."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    tgt = np.asarray(tgt, dtype=float).reshape(-1, 3)
    idx = np.empty(len(src), dtype=np.int64)
    dist = np.empty(len(src))
    step = max(1, 2_000_000 // max(len(tgt), 1))
    for s in range(0, len(src), step):
        d = pairwise_distances(src[s : s + step], tgt)
        j = np.argmax(d, axis=1)
        idx[s : s + step] = j
        dist[s : s + step] = d[np.arange(len(j)), j]
    return idx, dist


def radius_neighbors(points: np.ndarray, radius: float, tree: cKDTree | None = None) -> list[np.ndarray]:
    """Ascending indices within ``radius`` (inclusive) of each point, self included."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < BRUTE_FORCE_BELOW:
        d = pairwise_distances(points, points)
        return [np.flatnonzero(row <= radius) for row in d]
    if tree is None:
        tree = cKDTree(points)
    out = []
    # pad the tree radius so rounding in the tree never drops a boundary point
    for i, cand in enumerate(tree.query_ball_point(points, radius * (1 + 1e-9) + 1e-12)):
        cand = np.asarray(sorted(cand), dtype=np.int64)
        keep = point_distances(points[cand], points[i]) <= radius
        out.append(cand[keep])
    return out


def radius_counts(points: np.ndarray, radius: float, others: np.ndarray | None = None) -> np.ndarray:
    """Number of ``others`` within ``radius`` of each point (default others = points)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    others = points if others is None else np.asarray(others, dtype=float).reshape(-1, 3)
    if len(others) < BRUTE_FORCE_BELOW or len(points) < BRUTE_FORCE_BELOW:
        return (pairwise_distances(points, others) <= radius).sum(1)
    tree = cKDTree(others)
    counts = np.empty(len(points), dtype=np.int64)
    for i, cand in enumerate(tree.query_ball_point(points, radius * (1 + 1e-9) + 1e-12)):
        cand = np.asarray(cand, dtype=np.int64)
        counts[i] = int((point_distances(others[cand], points[i]) <= radius).sum())
    return counts


def knn(points: np.ndarray, k: int, exclude_self: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(distances, indices) of the k nearest neighbors, each (N, k'), k' = min(k, available)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    extra = 1 if exclude_self else 0
    kk = min(k + extra, n)
    if kk == 0:
        return np.zeros((n, 0)), np.zeros((n, 0), dtype=np.int64)
    if n < BRUTE_FORCE_BELOW:
        d = pairwise_distances(points, points)
        idx = np.argsort(d, axis=1, kind="stable")[:, :kk]
        dist = np.take_along_axis(d, idx, axis=1)
    else:
        dist, idx = cKDTree(points).query(points, k=kk)
        dist, idx = dist.reshape(n, kk), idx.reshape(n, kk)
    if exclude_self:
        # drop the self entry (or, with duplicates, any one zero-distance entry that is self)
        rows = np.arange(n)[:, None]
        is_self = idx == rows
        has_self = is_self.any(1)
        drop = np.where(has_self, np.argmax(is_self, axis=1), kk - 1)
        keep = np.ones_like(idx, dtype=bool)
        keep[np.arange(n), drop] = False
        idx = idx[keep].reshape(n, kk - 1)
        dist = dist[keep].reshape(n, kk - 1)
    return dist, idx
