"""Self-supervised alignment terms for radar frame pairs, as pure functions.

Every score takes an already transformed source frame (``src_tf``) and the
target frame, is deterministic, and returns a non-negative scalar that is
minimal at correct alignment. The teacher-guidance term needs the pose
solver and lives in :mod:`radarsplat.odometry`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import RadarFrame, Se3Pose, to_euler
from .errors import DegenerateCovariance, DimensionMismatch
from .preprocess import ClusterAssignment
from .spatial import farthest, nearest, radius_counts

LOG_2PI = math.log(2.0 * math.pi)


def _positions(x) -> np.ndarray:
    return x.positions if isinstance(x, RadarFrame) else np.asarray(x, dtype=float).reshape(-1, 3)


def _labels(c) -> np.ndarray:
    return c.labels if isinstance(c, ClusterAssignment) else np.asarray(c, dtype=np.int64)


# ------------------------------------------------------ cluster-weighted distance


def local_density(frame, radius: float) -> np.ndarray:
    """Number of other points within ``radius`` of each point."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return radius_counts(_positions(frame), radius) - 1


def _directed_cluster_distance(a, b, labels, delta, eps, radius, weighting) -> float:
    pa, pb = _positions(a), _positions(b)
    n = len(pa)
    _, nn = nearest(pa, pb)
    d = np.maximum(nn**2 - eps, 0.0)
    d[local_density(pa, radius) <= delta] = 0.0
    # noise points (-1) form one extra pseudo-cluster
    groups = np.where(labels < 0, labels.max(initial=-1) + 1, labels)
    sizes = np.bincount(groups)
    sums = np.bincount(groups, weights=d)
    present = sizes > 0
    frac = sizes[present] / n
    w = frac if weighting == "literal" else frac**2
    return float(np.sum(w * sums[present] / sizes[present]))


def cluster_weighted_distance(
    src_tf,
    tgt,
    src_clusters,
    tgt_clusters,
    delta: int = 2,
    eps: float = 0.0225,
    radius: float = 1.0,
    weighting: str = "literal",
) -> float:
    """Bidirectional density-gated nearest-neighbor distance, averaged per cluster.

    Per point: squared NN distance minus ``eps`` (floored at 0), zeroed when
    the point has at most ``delta`` neighbors within ``radius`` in its own
    frame. Each cluster contributes its mean distance weighted by its share
    n_c / N of the frame (``weighting="literal"``, which reduces to a plain
    per-point mean) or by (n_c / N)^2 (``"squared"``, favoring big clusters).
    """
    if weighting not in ("literal", "squared"):
        raise ValueError(f"unknown weighting {weighting!r}")
    s = _directed_cluster_distance(src_tf, tgt, _labels(src_clusters), delta, eps, radius, weighting)
    t = _directed_cluster_distance(tgt, src_tf, _labels(tgt_clusters), delta, eps, radius, weighting)
    return s + t


# ------------------------------------------------------------- column occupancy


@dataclass(frozen=True, eq=False)
class PolarOccupancy:
    grid: np.ndarray  # (n_rings, n_sectors) uint8
    r_max: float

    @property
    def n_rings(self) -> int:
        return self.grid.shape[0]

    @property
    def n_sectors(self) -> int:
        return self.grid.shape[1]


def polar_bins(positions: np.ndarray, n_rings: int, n_sectors: int, r_max: float):
    """(ring, sector, kept-mask) for every point; azimuth 0 deg points along -y."""
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    theta = np.mod(90.0 + np.degrees(np.arctan2(p[:, 1], p[:, 0])), 360.0)
    r = np.hypot(p[:, 0], p[:, 1])
    keep = r < r_max
    ring = np.floor(r / (r_max / n_rings)).astype(np.int64)
    sector = np.floor(theta / (360.0 / n_sectors)).astype(np.int64) % n_sectors
    return ring, sector, keep


def polar_occupancy(frame, n_rings: int = 32, n_sectors: int = 72, r_max: float = 80.0) -> PolarOccupancy:
    if n_rings < 1 or n_sectors < 1 or r_max <= 0:
        raise ValueError("need n_rings, n_sectors >= 1 and r_max > 0")
    grid = np.zeros((n_rings, n_sectors), dtype=np.uint8)
    pos = _positions(frame)
    if len(pos):
        ring, sector, keep = polar_bins(pos, n_rings, n_sectors, r_max)
        grid[ring[keep], sector[keep]] = 1
    return PolarOccupancy(grid, float(r_max))


def column_occupancy_score(a: PolarOccupancy, b: PolarOccupancy) -> float:
    """1 - mean cosine similarity over sector columns occupied in both grids."""
    if a.grid.shape != b.grid.shape:
        raise DimensionMismatch(f"{a.grid.shape} vs {b.grid.shape}")
    A = a.grid.astype(float)
    B = b.grid.astype(float)
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    valid = (na > 0) & (nb > 0)
    if not valid.any():
        return 0.0
    cos = (A[:, valid] * B[:, valid]).sum(0) / (na[valid] * nb[valid])
    return float(1.0 - cos.mean())


# ------------------------------------------------------- GMM / Cauchy-Schwarz


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 3)
    covariances: np.ndarray  # (K, 3, 3)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")

    def __len__(self) -> int:
        return len(self.weights)

    def isotropic_variances(self) -> np.ndarray | None:
        """Per-component variance when every covariance is s^2 * I, else None."""
        c = self.covariances
        s2 = c[:, 0, 0]
        if np.allclose(c, s2[:, None, None] * np.eye(3), rtol=0, atol=1e-15 * max(1.0, float(s2.max()))):
            return s2
        return None

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros(len(x))
        for w, m, c in zip(self.weights, self.means, self.covariances):
            d = x - m
            ci = np.linalg.inv(c)
            q = np.einsum("ni,ij,nj->n", d, ci, d)
            out += w * np.exp(-0.5 * q) / math.sqrt((2 * math.pi) ** 3 * np.linalg.det(c))
        return out


def gmm_from_frame(frame, bandwidth: float = 0.5) -> GaussianMixture:
    """One isotropic kernel of std ``bandwidth`` per point, equal weights."""
    pos = _positions(frame)
    if len(pos) == 0:
        raise ValueError("cannot build a mixture from an empty frame")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    n = len(pos)
    covs = np.broadcast_to(bandwidth**2 * np.eye(3), (n, 3, 3)).copy()
    return GaussianMixture(np.full(n, 1.0 / n), pos.copy(), covs)


def _log_cross_integral(p: GaussianMixture, q: GaussianMixture) -> float:
    """log ∫ p q dx via the product rule ∫N(x;a,A)N(x;b,B)dx = N(a; b, A+B)."""
    lw = np.log(p.weights)[:, None] + np.log(q.weights)[None, :]
    d = p.means[:, None, :] - q.means[None, :, :]
    sp, sq = p.isotropic_variances(), q.isotropic_variances()
    if sp is not None and sq is not None:
        s = sp[:, None] + sq[None, :]
        if np.any(s <= 1e-300):
            raise DegenerateCovariance("summed component variance is zero")
        logn = -0.5 * (3 * LOG_2PI + 3 * np.log(s) + (d**2).sum(-1) / s)
    else:
        S = p.covariances[:, None] + q.covariances[None, :]
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise DegenerateCovariance("summed covariance is not positive definite") from exc
        diag = np.diagonal(L, axis1=-2, axis2=-1)
        if np.any(diag <= 1e-150) or np.any(diag.max(-1) / diag.min(-1) > 1e8):
            raise DegenerateCovariance("summed covariance is numerically singular")
        y = np.linalg.solve(L, d[..., None])[..., 0]
        logn = -0.5 * (3 * LOG_2PI + 2 * np.log(diag).sum(-1) + (y**2).sum(-1))
    return float(logsumexp(lw + logn))


def cs_divergence(p: GaussianMixture, q: GaussianMixture) -> float:
    """Cauchy-Schwarz divergence -log(∫pq / sqrt(∫p² ∫q²)), closed form."""
    val = -_log_cross_integral(p, q) + 0.5 * (_log_cross_integral(p, p) + _log_cross_integral(q, q))
    # Cauchy-Schwarz guarantees val >= 0; clip rounding noise
    return max(val, 0.0)


# --------------------------------------------------------------- feature contrast


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return (a * b).sum(1) / np.maximum(na * nb, 1e-12)


def feature_contrast_score(src_tf, tgt, feat_s: np.ndarray, feat_t: np.ndarray, tau: float = 0.07) -> float:
    """InfoNCE with the spatially nearest target point as positive and the
    farthest as negative."""
    ps, pt = _positions(src_tf), _positions(tgt)
    fs, ft = np.asarray(feat_s, dtype=float), np.asarray(feat_t, dtype=float)
    if len(fs) != len(ps) or len(ft) != len(pt):
        raise DimensionMismatch("feature rows must match frame sizes")
    if not (np.isfinite(fs).all() and np.isfinite(ft).all()):
        raise ValueError("features contain NaN/Inf")
    if tau <= 0:
        raise ValueError("tau must be positive")
    pos, _ = nearest(ps, pt)
    neg, _ = farthest(ps, pt)
    s_pos = _cosine(fs, ft[pos])
    s_neg = _cosine(fs, ft[neg])
    # -log(e^a / (e^a + e^b)) = log(1 + e^(b - a))
    return float(np.mean(np.logaddexp(0.0, (s_neg - s_pos) / tau)))


# ----------------------------------------------------------------- motion


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def motion_smoothness(
    poses: Sequence[Se3Pose],
    eps_r: float = 0.01,
    eps_t: float = 0.05,
    weight: float = 1.0,
) -> float:
    """Constant-acceleration penalty over three consecutive relative poses.

    Velocities are Euler-angle and translation differences of successive
    relative poses; the L1 norm of their change beyond a dead zone
    (``eps_r`` rad, ``eps_t`` m) is penalized.
    """
    if len(poses) != 3:
        raise ValueError("motion_smoothness takes exactly three relative poses")
    if weight < 0:
        raise ValueError("weight must be non-negative")
    e = np.array([to_euler(p.rotation) for p in poses])
    t = np.array([p.translation for p in poses])
    vel_r = _wrap(np.diff(e, axis=0))
    vel_t = np.diff(t, axis=0)
    acc_r = np.abs(_wrap(vel_r[1] - vel_r[0])).sum()
    acc_t = np.abs(vel_t[1] - vel_t[0]).sum()
    return float(weight * (max(acc_r - eps_r, 0.0) + max(acc_t - eps_t, 0.0)))


def lambda_cm_schedule(epoch: int, initial: float = 1.0, decay: float = 0.95, floor: float = 0.1) -> float:
    """Motion-term weight after ``epoch`` epochs of multiplicative decay."""
    return max(initial * decay**epoch, floor)
