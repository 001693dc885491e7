"""Multi-view gaussian map optimization with Adam and radar-aware densification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .growth import default_interp_distance, densify_clone_split, geometry_aware_resplit, interpolate_gaussians
from .ground import ground_completion
from .model import GaussianMap
from .raster import GaussianGrads, LossWeights, render_with_gradients
from .separation import default_prune_distance, neighborhood_prune, update_sky_mask

log = logging.getLogger(__name__)

PARAMS = ("mu", "opacity_logit", "log_scale", "quat", "color")


@dataclass(frozen=True)
class Schedule:
    iterations: int = 1500
    # loss
    lam: float = 0.1
    lam_mvc: float = 3.0
    gamma: float = 1.0
    w_depth: float = 1.0
    w_normal: float = 1.0
    normalize_depth: bool = False
    view_stride: int = 1  # L, offset unit of the multi-view term
    # Adam
    lr_mu: float = 1.6e-4  # times scene extent
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-15
    # densification
    densify: bool = True
    densify_from: int = 500
    densify_every: int = 100
    densify_stop: float = 0.5  # densification ends after this fraction of the iterations
    grad_threshold: float = 5e-4
    grad_terms: str = "all"  # loss terms behind the densification statistic: "all" or "image"
    percent_dense: float = 0.01  # clone/split scale threshold, fraction of extent
    resplit_fraction: float = 0.1  # resplit threshold, fraction of extent
    resplit_m: int = 4
    resplit_alpha: float = 0.6
    interp_opacity: float = 0.7
    interp_k: int = 6
    interp_factor: float = 3.0  # d_max, multiple of the median nearest-neighbor distance
    interp_separation: float = 0.5  # void-filling rule, multiple of the median nearest-neighbor distance
    # pruning
    prune_k: int = 5
    prune_factor: float = 2.0
    tau_s: float = 1.0
    tau_r: float = 40.0
    # radar-specific stages
    sky_mask: bool = True
    ground_completion: bool = True
    ground_stride: int = 2
    seed: int = 0

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lam, self.gamma, self.w_depth, self.w_normal, self.normalize_depth)

    def lr(self, extent: float) -> dict:
        return {"mu": self.lr_mu * extent, "opacity_logit": self.lr_opacity, "log_scale": self.lr_scale,
                "quat": self.lr_rotation, "color": self.lr_color}

    def densify_at(self, it: int) -> bool:
        return (self.densify and self.densify_from <= it < self.densify_stop * self.iterations
                and (it - self.densify_from) % self.densify_every == 0)


@dataclass
class OptimizeStats:
    losses: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    nan_grads: int = 0
    ground_added: int = 0
    densify_events: int = 0


def scene_extent(views) -> float:
    """1.1 x radius of the camera centers around their mean, at least 1 m."""
    c = np.array([cam.center for cam, _ in views])
    r = float(np.linalg.norm(c - c.mean(0), axis=1).max()) if len(c) else 0.0
    return max(1.1 * r, 1.0)


class Adam:
    """Per-parameter Adam whose moments follow gaussians by uid across densification."""

    def __init__(self, gmap: GaussianMap, lr: dict, beta1=0.9, beta2=0.999, eps=1e-15):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.uid = gmap.uid.copy()
        self.m = {k: np.zeros_like(getattr(gmap, k)) for k in PARAMS}
        self.v = {k: np.zeros_like(getattr(gmap, k)) for k in PARAMS}
        self.t = 0

    def remap(self, uid: np.ndarray) -> None:
        """Carry moments over to a new gaussian set; unknown uids start from zero."""
        if np.array_equal(uid, self.uid):
            return
        order = np.argsort(self.uid)
        pos = np.clip(np.searchsorted(self.uid[order], uid), 0, max(len(order) - 1, 0))
        found = (self.uid[order][pos] == uid) if len(order) else np.zeros(len(uid), dtype=bool)
        src = order[pos]
        for d in (self.m, self.v):
            for k, arr in d.items():
                new = np.zeros((len(uid),) + arr.shape[1:])
                new[found] = arr[src[found]]
                d[k] = new
        self.uid = uid.copy()

    def step(self, gmap: GaussianMap, grads: GaussianGrads) -> GaussianMap:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        upd = {}
        for k in PARAMS:
            g = getattr(grads, k)
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            step = self.lr[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            upd[k] = getattr(gmap, k) - step
        upd["color"] = np.clip(upd["color"], 0.0, 1.0)
        upd["quat"] = upd["quat"] / np.linalg.norm(upd["quat"], axis=1, keepdims=True)
        return gmap.replace(**upd)


def _neighbors(t: int, n: int, stride: int) -> list[int]:
    return [t + w for w in (-2 * stride, -stride, stride, 2 * stride) if 0 <= t + w < n]


def optimize_with_stats(gmap: GaussianMap, views, schedule: Schedule = Schedule()):
    """Run the optimization; returns (map, stats)."""
    views = list(views)
    if not views:
        raise ValueError("need at least one view")
    for cam, pri in views:
        pri.check_camera(cam)
    stats = OptimizeStats()
    if schedule.iterations <= 0:
        return gmap, stats
    rng = np.random.default_rng(schedule.seed)
    extent = scene_extent(views)
    adam = Adam(gmap, schedule.lr(extent), schedule.beta1, schedule.beta2, schedule.adam_eps)
    weights = schedule.loss_weights()
    mv_weights = weights.color_only(schedule.lam_mvc / 4.0)
    visited = np.zeros(len(views), dtype=bool)
    g_sum = np.zeros(len(gmap))
    g_cnt = np.zeros(len(gmap))
    nv = len(views)

    for it in range(schedule.iterations):
        t = it % nv
        cam, pri = views[t]
        if not visited[t]:
            visited[t] = True
            if schedule.ground_completion:
                before = len(gmap)
                gmap = ground_completion(gmap, cam, pri, schedule.ground_stride, schedule.seed)
                stats.ground_added += len(gmap) - before
        if schedule.sky_mask:
            gmap = update_sky_mask(gmap, cam, pri.sky2d)
        if len(gmap) != len(g_sum):
            g_sum = np.concatenate([g_sum, np.zeros(len(gmap) - len(g_sum))])
            g_cnt = np.concatenate([g_cnt, np.zeros(len(gmap) - len(g_cnt))])
            adam.remap(gmap.uid)

        res = render_with_gradients(gmap, cam, pri, weights, grad2d_terms=schedule.grad_terms)
        loss, grads = res.loss, res.grads
        for j in _neighbors(t, nv, schedule.view_stride):
            r = render_with_gradients(gmap, views[j][0], views[j][1], mv_weights)
            loss += r.loss
            grads.add(r.grads)
        for k in PARAMS:
            arr = getattr(grads, k)
            bad = ~np.isfinite(arr)
            if bad.any():
                stats.nan_grads += int(bad.sum())
                arr[bad] = 0.0
        g_sum += np.where(res.visible, res.grad2d, 0.0)
        g_cnt += res.visible
        gmap = adam.step(gmap, grads)
        stats.losses.append(float(loss))

        if schedule.densify_at(it):
            mean_grad = np.where(g_cnt > 0, g_sum / np.maximum(g_cnt, 1), 0.0)
            steps = [len(gmap)]
            gmap = densify_clone_split(gmap, mean_grad, schedule.grad_threshold, schedule.percent_dense * extent, rng)
            steps.append(len(gmap))
            gmap = geometry_aware_resplit(gmap, schedule.resplit_fraction * extent, schedule.resplit_m,
                                          schedule.resplit_alpha, rng)
            steps.append(len(gmap))
            nn = default_interp_distance(gmap, 1.0)
            gmap = interpolate_gaussians(gmap, schedule.interp_opacity, schedule.interp_k,
                                         schedule.interp_factor * nn, schedule.interp_separation * nn)
            steps.append(len(gmap))
            tau_d = default_prune_distance(gmap, schedule.prune_factor)
            if np.isfinite(tau_d) and tau_d > 0:
                gmap = neighborhood_prune(gmap, tau_d, schedule.tau_s, schedule.tau_r, cam, schedule.prune_k)
            steps.append(len(gmap))
            log.debug("iter=%d densify clone/split=%d resplit=%d interp=%d prune=%d hot=%d", it, *np.diff(steps),
                      int((mean_grad >= schedule.grad_threshold).sum()))
            adam.remap(gmap.uid)
            g_sum = np.zeros(len(gmap))
            g_cnt = np.zeros(len(gmap))
            stats.densify_events += 1
            log.debug("iter=%d densify count=%d", it, len(gmap))
        stats.counts.append(len(gmap))
        if (it + 1) % 100 == 0:
            log.debug("iter=%d loss=%.5f count=%d", it + 1, loss, len(gmap))
    return gmap, stats


def optimize(gmap: GaussianMap, views, schedule: Schedule = Schedule()) -> GaussianMap:
    return optimize_with_stats(gmap, views, schedule)[0]
