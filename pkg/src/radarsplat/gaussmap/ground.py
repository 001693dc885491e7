"""Ground plane fitting, plane-to-plane alignment and depth-assisted ground completion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import Camera, Se3Pose, skew
from ..errors import NoGroundFound
from .model import GaussianMap, ViewPriors, init_from_points

log = logging.getLogger(__name__)

GROUND_INLIER_DIST = 0.15


@dataclass(frozen=True, eq=False)
class Plane:
    """Points p with normal . p + d = 0; ``inliers`` indexes the fitted point set."""

    normal: np.ndarray
    d: float
    inliers: np.ndarray

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal + self.d


def _plane_from_samples(p: np.ndarray):
    """Planes through each sampled triple p (K, 3, 3); returns normals (K, 3), offsets, valid mask."""
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(n, axis=1)
    valid = norm > 1e-12
    n = n / np.where(valid, norm, 1.0)[:, None]
    return n, -(n * p[:, 0]).sum(1), valid


def _ransac(points: np.ndarray, iterations: int, threshold: float, rng) -> np.ndarray:
    """Inlier index set of the best-supported plane (first wins ties)."""
    n = len(points)
    samples = np.stack([rng.choice(n, 3, replace=False) for _ in range(iterations)])
    normals, offsets, valid = _plane_from_samples(points[samples])
    if not valid.any():
        return np.zeros(0, dtype=np.int64)
    normals, offsets = normals[valid], offsets[valid]
    best, best_count = None, -1
    # score in chunks to bound memory
    for s in range(0, len(normals), 64):
        dist = np.abs(points @ normals[s:s + 64].T + offsets[s:s + 64])
        counts = (dist < threshold).sum(0)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best = counts[j], s + j
    return np.flatnonzero(np.abs(points @ normals[best] + offsets[best]) < threshold)


def _least_squares_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    c = points.mean(0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return n, float(-n @ c)


def fit_ground_plane(
    points,
    iterations: int = 500,
    threshold: float = GROUND_INLIER_DIST,
    max_tilt_deg: float = 15.0,
    rounds: int = 5,
    seed: int = 0,
) -> Plane:
    """Iterative RANSAC for a near-horizontal plane.

    A plane tilted more than ``max_tilt_deg`` from +z has its inliers removed
    before the next round. The accepted plane is refined by least squares on
    its inliers and oriented so that normal . z > 0.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise NoGroundFound(f"need >= 3 points, got {len(pts)}")
    rng = np.random.default_rng(seed)
    remaining = np.arange(len(pts))
    cos_max = math.cos(math.radians(max_tilt_deg))
    for _ in range(rounds):
        if len(remaining) < 3:
            break
        sub = pts[remaining]
        inl = _ransac(sub, iterations, threshold, rng)
        if len(inl) < 3:
            break
        n, d = _least_squares_plane(sub[inl])
        if abs(n[2]) >= cos_max:
            if n[2] < 0:
                n, d = -n, -d
            return Plane(n, d, remaining[inl])
        remaining = np.delete(remaining, inl)
    raise NoGroundFound("no near-horizontal plane found")


def align_planes(qa: Plane, qb: Plane) -> Se3Pose:
    """Rigid motion taking plane a onto plane b (Rodrigues rotation of normals, shift along n_b)."""
    na = qa.normal / np.linalg.norm(qa.normal)
    nb = qb.normal / np.linalg.norm(qb.normal)
    v = np.cross(na, nb)
    s2 = float(v @ v)
    c = float(na @ nb)
    if s2 < 1e-18:
        if c > 0:
            R = np.eye(3)
        else:
            # half turn about any axis perpendicular to n_b
            helper = np.eye(3)[int(np.argmin(np.abs(nb)))]
            a = np.cross(nb, helper)
            a /= np.linalg.norm(a)
            R = 2.0 * np.outer(a, a) - np.eye(3)
    else:
        K = skew(v)
        R = np.eye(3) + K + K @ K * ((1.0 - c) / s2)
    return Se3Pose(R, (qa.d - qb.d) * nb)


def virtual_points(cam: Camera, priors: ViewPriors, stride: int = 4):
    """World points and colors from every ``stride``-th non-sky pixel with positive prior depth."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows, cols = np.mgrid[0:cam.height:stride, 0:cam.width:stride]
    rows, cols = rows.ravel(), cols.ravel()
    depth = priors.depth_prior[rows, cols]
    ok = ~priors.sky2d[rows, cols] & (depth > 0) & np.isfinite(depth)
    rows, cols = rows[ok], cols[ok]
    return cam.unproject(rows, cols, depth[ok]), priors.image[rows, cols]


def in_frustum(gmap: GaussianMap, cam: Camera) -> np.ndarray:
    uv, z = cam.project(gmap.mu)
    with np.errstate(invalid="ignore"):
        return (z > 0.01) & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)


def ground_completion(
    gmap: GaussianMap,
    cam: Camera,
    priors: ViewPriors,
    stride: int = 4,
    seed: int = 0,
    threshold: float = GROUND_INLIER_DIST,
) -> GaussianMap:
    """Add ground gaussians unprojected from the depth prior and snapped onto the map's ground plane.

    Returns the map unchanged when either plane cannot be fitted.
    """
    pa, colors = virtual_points(cam, priors, stride)
    if len(pa) < 3:
        log.debug("ground_completion: no virtual points")
        return gmap
    vis = in_frustum(gmap, cam) & ~gmap.sky
    try:
        qa = fit_ground_plane(pa, threshold=threshold, seed=seed)
        qb = fit_ground_plane(gmap.mu[vis], threshold=threshold, seed=seed)
    except NoGroundFound as exc:
        log.info("ground_completion skipped: %s", exc)
        return gmap
    ground = np.abs(qa.distance(pa)) < threshold
    if not ground.any():
        return gmap
    T = align_planes(qa, qb)
    projected = T.apply(pa[ground])
    new = init_from_points(projected, colors[ground])
    return gmap.appended(new.mu, new.opacity_logit, new.log_scale, new.quat, new.color)
