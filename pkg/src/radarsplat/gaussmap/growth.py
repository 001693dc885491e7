"""Densification: standard clone/split, geometry-aware resplitting and neighbor interpolation."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from ..spatial import knn
from .model import GaussianMap

SPLIT_CHILDREN = 2
SPLIT_SCALE_DIVISOR = 1.6


def sample_split_centers(mu: np.ndarray, R: np.ndarray, scale: np.ndarray, n: int, rng) -> np.ndarray:
    """Draw ``n`` centers from N(mu, R diag(scale^2) R^T) for one gaussian."""
    z = rng.standard_normal((n, 3)) * scale
    return mu + z @ R.T


def densify_clone_split(
    gmap: GaussianMap,
    grad2d: np.ndarray,
    grad_threshold: float = 5e-4,
    scale_threshold: float = 0.01,
    rng=None,
) -> GaussianMap:
    """Clone small and split large gaussians whose mean 2D position gradient reaches the threshold.

    ``grad2d`` holds one averaged gradient magnitude per gaussian. A clone is
    an exact copy under a new uid. A split replaces the parent with two
    children drawn from its own distribution, scales divided by 1.6.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grad2d = np.asarray(grad2d, dtype=float)
    if len(grad2d) != len(gmap):
        raise ValueError("need one gradient statistic per gaussian")
    hot = grad2d >= grad_threshold
    if not hot.any():
        return gmap
    big = gmap.scale.max(1) >= scale_threshold
    clone = np.flatnonzero(hot & ~big)
    split = np.flatnonzero(hot & big)

    out = gmap.appended(gmap.mu[clone], gmap.opacity_logit[clone], gmap.log_scale[clone], gmap.quat[clone],
                        gmap.color[clone], gmap.sky[clone])
    if len(split):
        R = gmap.rotations()[split]
        s = gmap.scale[split]
        centers = np.concatenate(
            [sample_split_centers(gmap.mu[i], R[j], s[j], SPLIT_CHILDREN, rng) for j, i in enumerate(split)]
        )
        rep = np.repeat(split, SPLIT_CHILDREN)
        out = out.appended(centers, gmap.opacity_logit[rep], gmap.log_scale[rep] - math.log(SPLIT_SCALE_DIVISOR),
                           gmap.quat[rep], gmap.color[rep], gmap.sky[rep])
        keep = np.ones(len(out), dtype=bool)
        keep[split] = False
        out = out.select(keep)
    return out


def spatial_scales(mu: np.ndarray) -> np.ndarray:
    """Distance from every center to its nearest other center (inf for a lone center)."""
    if len(mu) < 2:
        return np.full(len(mu), np.inf)
    d, _ = knn(mu, 1)
    return d[:, 0]


def geometry_aware_resplit(
    gmap: GaussianMap,
    big_scale_threshold: float,
    M: int = 4,
    alpha: float = 0.6,
    rng=None,
) -> GaussianMap:
    """Replace every oversized non-sky gaussian by ``M`` children spread at its spatial scale.

    The spatial scale of gaussian i is the distance to its nearest neighbor;
    child offsets are drawn from N(0, scale^2 I), rotated by the parent's
    rotation, and child scales are the parent scales times ``alpha``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    sel = np.flatnonzero((gmap.scale.max(1) > big_scale_threshold) & ~gmap.sky)
    if len(sel) == 0:
        return gmap
    s_hat = spatial_scales(gmap.mu)[sel]
    # a lone gaussian has no neighbor; fall back to its own largest axis
    s_hat = np.where(np.isfinite(s_hat), s_hat, gmap.scale[sel].max(1))
    R = gmap.rotations()[sel]
    offsets = rng.standard_normal((len(sel), M, 3)) * s_hat[:, None, None]
    centers = gmap.mu[sel][:, None, :] + np.einsum("nij,nmj->nmi", R, offsets)
    rep = np.repeat(sel, M)
    keep = np.ones(len(gmap), dtype=bool)
    keep[sel] = False
    return gmap.select(keep).appended(
        centers.reshape(-1, 3), gmap.opacity_logit[rep], gmap.log_scale[rep] + math.log(alpha), gmap.quat[rep],
        gmap.color[rep], gmap.sky[rep],
    )


def default_interp_distance(gmap: GaussianMap, factor: float = 3.0) -> float:
    """``factor`` times the median nearest-neighbor distance of the map centers."""
    s = spatial_scales(gmap.mu)
    s = s[np.isfinite(s)]
    return float(factor * np.median(s)) if len(s) else 0.0


def interpolate_gaussians(
    gmap: GaussianMap,
    opacity_threshold: float = 0.7,
    k: int = 6,
    d_max: float | None = None,
    min_separation: float = 0.0,
) -> GaussianMap:
    """Add one gaussian per high-opacity anchor inside its local neighborhood.

    Candidates are the ``k`` nearest high-opacity gaussians; those farther
    than ``d_max`` are discarded. The surviving set includes the anchor, and
    at least one neighbor must survive. The new center is the survivor
    centroid; its color blends the neighbor colors with inverse-distance
    weights normalized to 1; scale is the mean survivor scale and opacity
    and rotation come from the anchor.

    With ``min_separation`` > 0 only centers that fill a void are kept: a
    new center closer than that to an existing gaussian, or to a new center
    of an earlier anchor, is dropped. Without it every call adds a child per
    anchor, and since children inherit the anchor opacity the count doubles
    with each repeated call.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if d_max is None:
        d_max = default_interp_distance(gmap)
    cand = np.flatnonzero((gmap.opacity > opacity_threshold) & ~gmap.sky)
    if len(cand) < 2:
        return gmap
    pts = gmap.mu[cand]
    kk = min(k, len(cand) - 1)
    dist, idx = knn(pts, kk)
    ok = dist <= d_max
    n_nb = ok.sum(1)
    anchors = np.flatnonzero(n_nb >= 1)
    if len(anchors) == 0:
        return gmap
    ok, dist, idx = ok[anchors], dist[anchors], idx[anchors]
    cnt = n_nb[anchors] + 1.0
    nb_mu = pts[idx] * ok[..., None]
    centers = (pts[anchors] + nb_mu.sum(1)) / cnt[:, None]
    w = np.where(ok, 1.0 / np.maximum(dist, 1e-12), 0.0)
    w /= w.sum(1, keepdims=True)
    colors = np.einsum("nk,nkc->nc", w, gmap.color[cand][idx])
    sc = gmap.scale[cand]
    scales = (sc[anchors] + (sc[idx] * ok[..., None]).sum(1)) / cnt[:, None]
    src = cand[anchors]
    if min_separation > 0:
        keep = fills_void(centers, gmap.mu, min_separation)
        centers, colors, scales, src = centers[keep], colors[keep], scales[keep], src[keep]
    return gmap.appended(centers, gmap.opacity_logit[src], np.log(scales), gmap.quat[src], colors)


def fills_void(new: np.ndarray, existing: np.ndarray, r: float) -> np.ndarray:
    """Greedy mask over ``new`` (in order): farther than ``r`` from ``existing`` and from earlier kept rows."""
    keep = np.ones(len(new), dtype=bool)
    if len(new) == 0:
        return keep
    if len(existing):
        d, _ = cKDTree(existing).query(new)
        keep &= d >= r
    tree = cKDTree(new)
    for i in np.flatnonzero(keep):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(new[i], r):
            if j > i and np.linalg.norm(new[j] - new[i]) < r:
                keep[j] = False
    return keep
