"""Sky decoupling and neighborhood-aware pruning."""

from __future__ import annotations

import numpy as np

from ..core import Camera
from ..errors import DimensionMismatch
from ..spatial import knn
from .model import GaussianMap
from .raster import NEAR, project_all

MIN_OPACITY = 0.005


def update_sky_mask(gmap: GaussianMap, cam: Camera, sky2d: np.ndarray) -> GaussianMap:
    """Flag gaussians whose projected center lands on a sky pixel. Flags are never cleared."""
    sky2d = np.asarray(sky2d, dtype=bool)
    if sky2d.shape != (cam.height, cam.width):
        raise DimensionMismatch(f"sky mask {sky2d.shape} vs camera {(cam.height, cam.width)}")
    if len(gmap) == 0:
        return gmap
    uv, z = cam.project(gmap.mu)
    front = z > NEAR
    with np.errstate(invalid="ignore"):
        c = np.floor(np.where(front, uv[:, 0], -1.0)).astype(np.int64)
        r = np.floor(np.where(front, uv[:, 1], -1.0)).astype(np.int64)
    inside = front & (c >= 0) & (c < cam.width) & (r >= 0) & (r < cam.height)
    hit = np.zeros(len(gmap), dtype=bool)
    hit[inside] = sky2d[r[inside], c[inside]]
    if not (hit & ~gmap.sky).any():
        return gmap
    return gmap.replace(sky=gmap.sky | hit)


def mean_neighbor_distance(mu: np.ndarray, k: int = 5) -> np.ndarray:
    """Mean distance to the ``k`` nearest other centers (inf when alone)."""
    if len(mu) < 2:
        return np.full(len(mu), np.inf)
    d, _ = knn(mu, k)
    return d.mean(1)


def screen_radius(gmap: GaussianMap, cam: Camera) -> np.ndarray:
    """3 sqrt(largest 2D covariance eigenvalue) in pixels; 0 for culled gaussians."""
    pr = project_all(gmap, cam)
    return np.where(pr.visible, pr.radius(3.0), 0.0)


def prune_mask(gmap: GaussianMap, tau_d: float, tau_s: float, tau_r: float, cam: Camera, k: int = 5) -> np.ndarray:
    """Boolean removal mask of :func:`neighborhood_prune`."""
    if min(tau_d, tau_s, tau_r) <= 0:
        raise ValueError("prune thresholds must be positive")
    if len(gmap) == 0:
        return np.zeros(0, dtype=bool)
    isolated = mean_neighbor_distance(gmap.mu, k) > tau_d
    oversized = (gmap.scale.max(1) > tau_s) | (screen_radius(gmap, cam) > tau_r)
    return (isolated & oversized) | (gmap.opacity < MIN_OPACITY)


def neighborhood_prune(gmap: GaussianMap, tau_d: float, tau_s: float, tau_r: float, cam: Camera,
                       k: int = 5) -> GaussianMap:
    """Drop gaussians that are both far from their neighbors and oversized, plus near-transparent ones."""
    drop = prune_mask(gmap, tau_d, tau_s, tau_r, cam, k)
    return gmap.select(~drop) if drop.any() else gmap


def default_prune_distance(gmap: GaussianMap, factor: float = 2.0) -> float:
    """``factor`` times the median nearest-neighbor distance."""
    if len(gmap) < 2:
        return np.inf
    d, _ = knn(gmap.mu, 1)
    return float(factor * np.median(d[:, 0]))
