"""Frame preprocessing: height gate, DBSCAN clustering, farthest point sampling,
cluster summaries."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import RadarFrame
from .errors import EmptyFrame
from .spatial import radius_neighbors

NOISE = -1


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Per-point labels (-1 = noise) plus per-cluster size, centroid and mean (rrv, rcs)."""

    labels: np.ndarray
    cluster_count: int
    sizes: np.ndarray
    centroids: np.ndarray
    mean_features: np.ndarray

    @property
    def noise_count(self) -> int:
        return int((self.labels == NOISE).sum())


def height_filter(frame: RadarFrame, z_min: float = -3.0, z_max: float = 3.0) -> RadarFrame:
    if not z_min < z_max:
        raise ValueError(f"z_min {z_min} must be below z_max {z_max}")
    z = frame.positions[:, 2]
    keep = np.flatnonzero((z >= z_min) & (z <= z_max))
    if len(keep) == 0:
        raise EmptyFrame(f"no points in z range [{z_min}, {z_max}]")
    return frame.subset(keep)


def dbscan_labels(positions: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN over Euclidean distance with deterministic expansion.

    Seeds are tried in ascending index order and each cluster grows
    breadth-first, visiting neighbors in ascending index order. A border point
    reachable from two clusters stays with the one that reached it first.
    A point's neighborhood includes itself.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("dbscan needs eps > 0 and min_pts >= 1")
    n = len(positions)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    neigh = radius_neighbors(positions, eps)
    core = np.array([len(nb) >= min_pts for nb in neigh])
    assigned = np.zeros(n, dtype=bool)
    cluster = 0
    for seed in range(n):
        if assigned[seed] or not core[seed]:
            continue
        labels[seed] = cluster
        assigned[seed] = True
        queue = deque([seed])
        while queue:
            j = queue.popleft()
            for k in neigh[j]:
                if assigned[k]:
                    continue
                labels[k] = cluster
                assigned[k] = True
                if core[k]:
                    queue.append(k)
        cluster += 1
    return labels


def cluster_summaries(frame: RadarFrame, labels: np.ndarray) -> ClusterAssignment:
    """Per-cluster size, centroid and mean feature; noise points are excluded."""
    labels = np.asarray(labels, dtype=np.int64)
    count = int(labels.max()) + 1 if len(labels) and labels.max() >= 0 else 0
    valid = labels >= 0
    sizes = np.bincount(labels[valid], minlength=count).astype(np.int64)
    centroids = np.zeros((count, 3))
    feats = np.zeros((count, 2))
    if count:
        for d in range(3):
            centroids[:, d] = np.bincount(labels[valid], weights=frame.positions[valid, d], minlength=count)
        f = frame.features
        for d in range(2):
            feats[:, d] = np.bincount(labels[valid], weights=f[valid, d], minlength=count)
        nz = sizes > 0
        centroids[nz] /= sizes[nz, None]
        feats[nz] /= sizes[nz, None]
    return ClusterAssignment(labels, count, sizes, centroids, feats)


def dbscan(frame: RadarFrame, eps: float = 3.0, min_pts: int = 3) -> ClusterAssignment:
    return cluster_summaries(frame, dbscan_labels(frame.positions, eps, min_pts))


def farthest_point_sampling(frame_or_points, n: int) -> np.ndarray:
    """Indices of ``n`` farthest-point samples seeded at index 0.

    Each step takes the point with the largest distance to the selected set
    (lowest index on ties). With fewer than ``n`` points, every index is
    returned once (in sampling order) and the list is padded round-robin.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = frame_or_points.positions if isinstance(frame_or_points, RadarFrame) else np.asarray(frame_or_points, float)
    m = len(pts)
    if m == 0:
        raise EmptyFrame("cannot sample from an empty frame")
    take = min(n, m)
    chosen = np.empty(take, dtype=np.int64)
    chosen[0] = 0
    mind = np.sqrt(((pts - pts[0]) ** 2).sum(1))
    for s in range(1, take):
        j = int(np.argmax(mind))
        chosen[s] = j
        mind = np.minimum(mind, np.sqrt(((pts - pts[j]) ** 2).sum(1)))
    if take < n:
        chosen = np.concatenate([chosen, chosen[np.arange(n - take) % take]])
    return chosen


@dataclass(frozen=True, eq=False)
class PreparedFrame:
    """A frame after height filtering, clustering and sampling, with its clusters."""

    frame: RadarFrame
    clusters: ClusterAssignment


def prepare_frame(
    frame: RadarFrame,
    z_min: float = -3.0,
    z_max: float = 3.0,
    eps: float = 3.0,
    min_pts: int = 3,
    sample_n: int = 256,
) -> PreparedFrame:
    filtered = height_filter(frame, z_min, z_max)
    labels = dbscan_labels(filtered.positions, eps, min_pts)
    idx = farthest_point_sampling(filtered, sample_n)
    sampled = filtered.subset(idx)
    sub = labels[idx]
    # clusters that lost every member to sampling are dropped and labels compacted
    valid = sub >= 0
    if valid.any():
        _, sub[valid] = np.unique(sub[valid], return_inverse=True)
    return PreparedFrame(sampled, cluster_summaries(sampled, sub))
