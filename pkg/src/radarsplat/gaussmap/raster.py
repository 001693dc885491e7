"""Differentiable splat rasterizer (color, depth, normal) with analytic gradients.

Gaussians are projected with the local affine (Jacobian) approximation of
the pinhole model and blended front to back in ascending camera depth.
Each gaussian contributes to the pixels inside the disc where its weight
can still reach 1/255, so restricting work to that disc reproduces the
exhaustive per-pixel loop exactly. Two interchangeable backends exist: a
vectorized numpy pair list (the reference) and compiled per-pixel loops.

Pixel (r, c) is sampled at (u, v) = (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Camera
from ..imaging import ssim_and_grad
from .model import Gaussian, GaussianMap

NEAR = 0.01
COV2D_FLOOR = 0.3
ALPHA_MAX = 0.99
# x/z and y/z entering the projection Jacobian are clamped to this multiple
# of the image half-extent, as in standard splatting, so that gaussians far
# outside the frustum at small depth do not explode into screen-filling splats
FRUSTUM_GUARD = 1.3
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


@dataclass(frozen=True, eq=False)
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass(eq=False)
class Projection:
    """Per-gaussian screen-space quantities for one camera (all rows, culled ones included)."""

    visible: np.ndarray  # (N,) bool
    p_cam: np.ndarray  # (N, 3)
    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    conic: np.ndarray  # (N, 3) a, b, c of the inverse 2D covariance
    J: np.ndarray  # (N, 2, 3)
    V: np.ndarray  # (N, 3, 3) camera-frame 3D covariance
    R: np.ndarray  # (N, 3, 3) gaussian rotation
    scale: np.ndarray  # (N, 3)
    normal: np.ndarray  # (N, 3) world-frame normal facing the camera
    normal_axis: np.ndarray  # (N,) column of R used as normal
    normal_sign: np.ndarray  # (N,) +-1
    txy: np.ndarray  # (N, 2) x/z and y/z after the frustum clamp
    clamped: np.ndarray  # (N, 2) bool, where the clamp was active

    @property
    def depth(self) -> np.ndarray:
        return self.p_cam[:, 2]

    def radius(self, sigma: float = 3.0) -> np.ndarray:
        """Screen radius sigma * sqrt(largest eigenvalue of the 2D covariance)."""
        return sigma * np.sqrt(_max_eig(self.cov2d))


def _max_eig(cov2d: np.ndarray) -> np.ndarray:
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    return mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))


def project_all(gmap: GaussianMap, cam: Camera) -> Projection:
    n = len(gmap)
    W = cam.world_to_camera.rotation
    p = gmap.mu @ W.T + cam.world_to_camera.translation
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    visible = z > NEAR
    zs = np.where(visible, z, 1.0)
    lim_x = FRUSTUM_GUARD * max(cam.cx, cam.width - cam.cx) / cam.fx
    lim_y = FRUSTUM_GUARD * max(cam.cy, cam.height - cam.cy) / cam.fy
    raw = np.column_stack([x / zs, y / zs])
    txy = np.column_stack([np.clip(raw[:, 0], -lim_x, lim_x), np.clip(raw[:, 1], -lim_y, lim_y)])
    clamped = txy != raw
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * txy[:, 0] / zs
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * txy[:, 1] / zs
    R = gmap.rotations()
    scale = gmap.scale
    M = R * scale[:, None, :]
    sigma = M @ np.swapaxes(M, 1, 2)
    V = W @ sigma @ W.T
    cov = J @ V @ np.swapaxes(J, 1, 2) + COV2D_FLOOR * np.eye(2)
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    conic = np.column_stack([cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det])
    mean2d = np.column_stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy])
    axis = np.argmin(scale, axis=1)
    nrm = R[np.arange(n), :, axis]
    to_cam = cam.center - gmap.mu
    sign = np.where((nrm * to_cam).sum(1) < 0, -1.0, 1.0)
    return Projection(visible, p, mean2d, cov, conic, J, V, R, scale, nrm * sign[:, None], axis, sign, txy, clamped)


def project(g: Gaussian, cam: Camera) -> ProjectedGaussian | None:
    """Screen-space mean, 2D covariance and depth of one gaussian; None when culled."""
    pr = project_all(GaussianMap.from_gaussians([g]), cam)
    if not pr.visible[0]:
        return None
    return ProjectedGaussian(pr.mean2d[0], pr.cov2d[0], float(pr.p_cam[0, 2]))


@dataclass(eq=False)
class RenderBuffers:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    normal: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)

    def normalized_depth(self) -> np.ndarray:
        """Depth divided by accumulated alpha (0 where nothing was hit)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.alpha > 0, self.depth / self.alpha, 0.0)


def _candidates(pr: Projection, opacity: np.ndarray, cam: Camera):
    """Depth-ordered gaussians that can reach 1/255 somewhere, with their pixel bounding boxes."""
    H, W = cam.height, cam.width
    op = opacity
    cand = np.flatnonzero(pr.visible & (op >= ALPHA_MIN))
    # order by depth, ties by index
    cand = cand[np.lexsort((cand, pr.p_cam[cand, 2]))]
    # every pixel with weight >= 1/255 lies inside this disc
    r = np.sqrt(_max_eig(pr.cov2d[cand]) * 2.0 * np.log(255.0 * op[cand])) + 1e-6
    mx, my = pr.mean2d[cand, 0], pr.mean2d[cand, 1]
    c0 = np.maximum(np.ceil(mx - r - 0.5), 0)
    c1 = np.minimum(np.floor(mx + r - 0.5), W - 1)
    r0 = np.maximum(np.ceil(my - r - 0.5), 0)
    r1 = np.minimum(np.floor(my + r - 0.5), H - 1)
    ok = np.isfinite(r) & (c1 >= c0) & (r1 >= r0)
    return cand[ok], r0[ok].astype(np.int64), r1[ok].astype(np.int64), c0[ok].astype(np.int64), c1[ok].astype(np.int64)


class _NumpyRaster:
    """Reference implementation on a flat (pixel, gaussian) pair list sorted by pixel, then depth."""

    def __init__(self, pr: Projection, opacity: np.ndarray, cam: Camera, early_termination: bool):
        self.pr, self.op, self.n, self.npix = pr, opacity, len(opacity), cam.height * cam.width
        W = cam.width
        cand, r0, r1, c0, c1 = _candidates(pr, opacity, cam)
        nc = c1 - c0 + 1
        sizes = nc * (r1 - r0 + 1)
        total = int(sizes.sum())
        slot = np.repeat(np.arange(len(cand)), sizes)
        local = np.arange(total) - np.repeat(np.cumsum(sizes) - sizes, sizes)
        rows = r0[slot] + local // nc[slot]
        cols = c0[slot] + local % nc[slot]
        gid = cand[slot]
        dx = pr.mean2d[gid, 0] - (cols + 0.5)
        dy = pr.mean2d[gid, 1] - (rows + 0.5)
        con = pr.conic[gid]
        q = con[:, 0] * dx * dx + 2 * con[:, 1] * dx * dy + con[:, 2] * dy * dy
        a_raw = opacity[gid] * np.exp(-0.5 * q)
        keep = a_raw >= ALPHA_MIN
        pix = (rows * W + cols)[keep]
        order = np.argsort(pix, kind="stable")
        self.pix, self.gid = pix[order], gid[keep][order]
        self.dx, self.dy, self.alpha_raw = dx[keep][order], dy[keep][order], a_raw[keep][order]
        self.alpha = alpha = np.minimum(self.alpha_raw, ALPHA_MAX)
        k = len(self.pix)
        start = np.ones(k, dtype=bool)
        start[1:] = self.pix[1:] != self.pix[:-1]
        starts = np.flatnonzero(start)
        ends = np.append(starts[1:], k) - 1
        seg = np.cumsum(start) - 1
        # transmittance before each pair from a segmented log-cumsum
        l = np.log1p(-alpha)
        cs = np.cumsum(l)
        base = (cs[starts] - l[starts])[seg] if k else cs
        log_t = cs - l - base
        self.T = np.exp(log_t)
        self.mask = (log_t + l) >= math.log(T_MIN) if early_termination else np.ones(k, dtype=bool)
        self.weight = np.where(self.mask, alpha * self.T, 0.0)
        self.seg_end = ends[seg] if k else seg

    def forward(self, feats: np.ndarray) -> np.ndarray:
        out = np.empty((self.npix, feats.shape[1]))
        for ch in range(feats.shape[1]):
            out[:, ch] = np.bincount(self.pix, weights=self.weight * feats[self.gid, ch], minlength=self.npix)
        return out

    def touched(self) -> np.ndarray:
        return np.bincount(self.gid[self.mask], minlength=self.n) > 0

    def backward(self, G: np.ndarray, feats: np.ndarray, sky: np.ndarray):
        n, gid, wgt, pr = self.n, self.gid, self.weight, self.pr
        f = feats[gid]
        Gp = G[self.pix]
        v_all = (Gp * f).sum(1)
        v_col = (Gp[:, :3] * f[:, :3]).sum(1)

        # exclusive suffix sums of v * weight within each pixel
        def suffix(v):
            c = np.cumsum(v * wgt)
            return c[self.seg_end] - c

        s_all, s_col = suffix(v_all), suffix(v_col)
        pair_sky = sky[gid]
        v = np.where(pair_sky, v_col, v_all)
        s = np.where(pair_sky, s_col, s_all)
        dL_dalpha = np.where(self.mask, self.T * v - s / (1.0 - self.alpha), 0.0)
        dL_dalpha = np.where(self.alpha_raw < ALPHA_MAX, dL_dalpha, 0.0)

        geo_w = np.where(pair_sky, 0.0, wgt)
        feat_grad = np.column_stack(
            [np.bincount(gid, weights=(wgt if c < 3 else geo_w) * Gp[:, c], minlength=n) for c in range(G.shape[1])]
        )
        a = self.alpha_raw
        g_opl = np.bincount(gid, weights=dL_dalpha * a * (1.0 - self.op[gid]), minlength=n)
        dL_dq = dL_dalpha * (-0.5 * a)
        con = pr.conic[gid]
        dx, dy = self.dx, self.dy
        g_m = np.column_stack([
            np.bincount(gid, weights=dL_dq * (2 * con[:, 0] * dx + 2 * con[:, 1] * dy), minlength=n),
            np.bincount(gid, weights=dL_dq * (2 * con[:, 1] * dx + 2 * con[:, 2] * dy), minlength=n),
        ])
        g_con = np.column_stack([
            np.bincount(gid, weights=dL_dq * dx * dx, minlength=n),
            np.bincount(gid, weights=dL_dq * 2 * dx * dy, minlength=n),
            np.bincount(gid, weights=dL_dq * dy * dy, minlength=n),
        ])
        return feat_grad, g_opl, g_m, g_con


class _CompiledRaster:
    """Same arithmetic as :class:`_NumpyRaster` as per-pixel compiled loops."""

    def __init__(self, pr: Projection, opacity: np.ndarray, cam: Camera, early_termination: bool):
        from . import _kernels

        self._k = _kernels
        self.pr, self.op, self.n = pr, opacity, len(opacity)
        self.et = bool(early_termination)
        cand, r0, r1, c0, c1 = _candidates(pr, opacity, cam)
        self.start, self.gid, self.alpha_raw, self.dx, self.dy = _kernels.build_lists(
            cand, pr.mean2d, np.ascontiguousarray(pr.conic), opacity, r0, r1, c0, c1, cam.height, cam.width
        )

    def forward(self, feats: np.ndarray) -> np.ndarray:
        out, self.T, self.used = self._k.composite(self.start, self.gid, self.alpha_raw,
                                                   np.ascontiguousarray(feats), self.et)
        return out

    def touched(self) -> np.ndarray:
        used = np.arange(len(self.gid)) < np.repeat(self.start[:-1] + self.used, np.diff(self.start))
        return np.bincount(self.gid[used], minlength=self.n) > 0

    def backward(self, G: np.ndarray, feats: np.ndarray, sky: np.ndarray):
        return self._k.backward(self.start, self.gid, self.alpha_raw, self.dx, self.dy, self.T, self.used,
                                np.ascontiguousarray(feats), np.ascontiguousarray(G), sky, self.op,
                                np.ascontiguousarray(self.pr.conic), self.n)


BACKENDS = ("numpy", "compiled")


def _have_numba() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover
        return False
    return True


DEFAULT_BACKEND = "compiled" if _have_numba() else "numpy"


def _rasterizer(pr, opacity, cam, early_termination, backend):
    backend = backend or DEFAULT_BACKEND
    if backend == "numpy":
        return _NumpyRaster(pr, opacity, cam, early_termination)
    if backend == "compiled":
        return _CompiledRaster(pr, opacity, cam, early_termination)
    raise ValueError(f"unknown raster backend {backend!r}; expected one of {BACKENDS}")


def _features(pr: Projection, gmap: GaussianMap) -> np.ndarray:
    """(N, 8) per-gaussian blend features: rgb, depth, normal, 1."""
    return np.column_stack([gmap.color, pr.p_cam[:, 2], pr.normal, np.ones(len(gmap))])


def _buffers(out: np.ndarray, H: int, W: int) -> RenderBuffers:
    return RenderBuffers(out[:, 0:3].reshape(H, W, 3), out[:, 3].reshape(H, W), out[:, 4:7].reshape(H, W, 3),
                         out[:, 7].reshape(H, W))


def render(gmap: GaussianMap, cam: Camera, early_termination: bool = True, backend: str | None = None) -> RenderBuffers:
    """Front-to-back alpha blending of color, depth and normal."""
    H, W = cam.height, cam.width
    if len(gmap) == 0:
        return RenderBuffers(np.zeros((H, W, 3)), np.zeros((H, W)), np.zeros((H, W, 3)), np.zeros((H, W)))
    pr = project_all(gmap, cam)
    rast = _rasterizer(pr, gmap.opacity, cam, early_termination, backend)
    return _buffers(rast.forward(_features(pr, gmap)), H, W)


# ------------------------------------------------------------------ losses


@dataclass(frozen=True)
class LossWeights:
    """Per-view loss: color (1-lam) L1^gamma + lam (1-SSIM), plus depth and normal terms.

    ``scale`` multiplies the whole view loss (used for neighbor views).
    """

    lam: float = 0.1
    gamma: float = 1.0
    depth: float = 1.0
    normal: float = 1.0
    normalize_depth: bool = False
    scale: float = 1.0

    def color_only(self, scale: float) -> "LossWeights":
        return LossWeights(self.lam, self.gamma, 0.0, 0.0, self.normalize_depth, scale)


@dataclass(eq=False)
class GaussianGrads:
    mu: np.ndarray
    opacity_logit: np.ndarray
    log_scale: np.ndarray
    quat: np.ndarray
    color: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GaussianGrads":
        return cls(np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)))

    def add(self, other: "GaussianGrads") -> None:
        for name in ("mu", "opacity_logit", "log_scale", "quat", "color"):
            getattr(self, name)[...] += getattr(other, name)


@dataclass(eq=False)
class RenderResult:
    loss: float
    grads: GaussianGrads
    grad2d: np.ndarray  # (N,) |dL/d mean2d| in NDC units
    visible: np.ndarray  # (N,) bool, contributed to at least one pixel
    buffers: RenderBuffers
    terms: dict = field(default_factory=dict)


def _image_loss(buf: RenderBuffers, priors, w: LossWeights, want_grad: bool):
    """Loss value, per-term dict and upstream gradients w.r.t. color/depth/normal/alpha buffers."""
    H, W = buf.alpha.shape
    terms = {}
    g_color = np.zeros((H, W, 3))
    g_depth = np.zeros((H, W))
    g_normal = np.zeros((H, W, 3))
    g_alpha = np.zeros((H, W))
    res = buf.color - priors.image
    n = res.size
    if w.gamma == 1.0:
        l1 = np.abs(res).mean()
        g_l1 = np.sign(res) / n
    else:
        a = np.abs(res)
        l1 = (a**w.gamma).mean()
        g_l1 = w.gamma * np.where(a > 0, a ** (w.gamma - 1.0), 0.0) * np.sign(res) / n
    terms["l1"] = float(l1)
    loss = (1.0 - w.lam) * l1
    g_color += (1.0 - w.lam) * g_l1
    if w.lam > 0:
        s, g_s = ssim_and_grad(buf.color, priors.image)
        terms["ssim"] = s
        loss += w.lam * (1.0 - s)
        g_color -= w.lam * g_s
    valid = ~np.asarray(priors.sky2d, dtype=bool)
    nv = int(valid.sum())
    if w.depth > 0 and nv:
        if w.normalize_depth:
            dn = buf.normalized_depth()
            r = np.where(valid, dn - priors.depth_prior, 0.0)
            terms["depth"] = float(np.abs(r).sum() / nv)
            g = w.depth * np.sign(r) / nv
            hit = buf.alpha > 0
            safe = np.where(hit, buf.alpha, 1.0)
            g_depth += np.where(hit, g / safe, 0.0)
            g_alpha += np.where(hit, -g * buf.depth / safe**2, 0.0)
        else:
            r = np.where(valid, buf.depth - priors.depth_prior, 0.0)
            terms["depth"] = float(np.abs(r).sum() / nv)
            g_depth += w.depth * np.sign(r) / nv
        loss += w.depth * terms["depth"]
    if w.normal > 0 and nv:
        dot = (buf.normal * priors.normal_prior).sum(-1)
        terms["normal"] = float(np.where(valid, 1.0 - dot, 0.0).sum() / nv)
        loss += w.normal * terms["normal"]
        g_normal += np.where(valid[..., None], -w.normal * priors.normal_prior / nv, 0.0)
    s = w.scale
    return s * loss, terms, (s * g_color, s * g_depth, s * g_normal, s * g_alpha)


def view_loss(gmap: GaussianMap, cam: Camera, priors, weights: LossWeights = LossWeights(),
              early_termination: bool = True, backend: str | None = None) -> float:
    """Forward-only loss, the function whose gradient :func:`render_with_gradients` returns."""
    buf = render(gmap, cam, early_termination, backend)
    return _image_loss(buf, priors, weights, False)[0]


def _quat_backward(q: np.ndarray, gR: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. raw (unnormalized) quaternions given dL/dR."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    G = gR
    gw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2] - y * G[:, 2, 0] + x * G[:, 2, 1])
    gx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1] - w * G[:, 1, 2]
              + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    gy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0] + z * G[:, 1, 2]
              - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    gz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0] - 2 * z * G[:, 1, 1]
              + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    gqn = np.column_stack([gw, gx, gy, gz])
    return (gqn - qn * (qn * gqn).sum(1, keepdims=True)) / norm


def render_with_gradients(gmap: GaussianMap, cam: Camera, priors, weights: LossWeights = LossWeights(),
                          early_termination: bool = True, backend: str | None = None,
                          grad2d_terms: str = "all") -> RenderResult:
    """Render one view, evaluate its loss and backpropagate to every gaussian parameter.

    Sky-flagged gaussians receive gradients from the color terms only.
    ``grad2d_terms`` selects the loss terms behind the reported 2D position
    gradient: "all" or "image" (L1 and SSIM only, one extra backward pass).
    """
    if grad2d_terms not in ("all", "image"):
        raise ValueError(f"grad2d_terms must be 'all' or 'image', got {grad2d_terms!r}")
    H, W = cam.height, cam.width
    n = len(gmap)
    npix = H * W
    if n == 0:
        buf = render(gmap, cam)
        loss, terms, _ = _image_loss(buf, priors, weights, True)
        return RenderResult(loss, GaussianGrads.zeros(0), np.zeros(0), np.zeros(0, dtype=bool), buf, terms)

    pr = project_all(gmap, cam)
    rast = _rasterizer(pr, gmap.opacity, cam, early_termination, backend)
    feats = _features(pr, gmap)
    buf = _buffers(rast.forward(feats), H, W)
    loss, terms, (g_c, g_d, g_n, g_a) = _image_loss(buf, priors, weights, True)
    G = np.column_stack([g_c.reshape(npix, 3), g_d.reshape(npix), g_n.reshape(npix, 3), g_a.reshape(npix)])

    grads = GaussianGrads.zeros(n)
    feat_grad, g_opl, g_m, g_con = rast.backward(G, feats, gmap.sky)
    grads.color[:] = feat_grad[:, 0:3]
    g_depth_feat = feat_grad[:, 3]
    g_normal_feat = feat_grad[:, 4:7]
    grads.opacity_logit[:] = g_opl
    g_mx, g_my = g_m[:, 0], g_m[:, 1]
    g_ca, g_cb, g_cc = g_con.T

    # conic -> 2D covariance: dSigma' = -conic dConic conic
    Gc = np.empty((n, 2, 2))
    Gc[:, 0, 0], Gc[:, 0, 1], Gc[:, 1, 0], Gc[:, 1, 1] = g_ca, 0.5 * g_cb, 0.5 * g_cb, g_cc
    Cn = np.empty((n, 2, 2))
    Cn[:, 0, 0], Cn[:, 0, 1], Cn[:, 1, 0], Cn[:, 1, 1] = pr.conic[:, 0], pr.conic[:, 1], pr.conic[:, 1], pr.conic[:, 2]
    G_cov = -Cn @ Gc @ Cn
    J, V = pr.J, pr.V
    G_J = 2.0 * G_cov @ J @ V
    G_V = np.swapaxes(J, 1, 2) @ G_cov @ J
    Wr = cam.world_to_camera.rotation
    G_sigma = Wr.T @ G_V @ Wr
    M = pr.R * pr.scale[:, None, :]
    G_M = 2.0 * G_sigma @ M
    grads.log_scale[:] = (pr.R * G_M).sum(1) * pr.scale
    G_R = G_M * pr.scale[:, None, :]
    # normal = sign * R[:, axis]
    G_R[np.arange(n), :, pr.normal_axis] += pr.normal_sign[:, None] * g_normal_feat
    grads.quat[:] = _quat_backward(gmap.quat, G_R)

    x, y, z = pr.p_cam.T
    zs = np.where(pr.visible, z, 1.0)
    fx, fy = cam.fx, cam.fy
    g_pc = np.empty((n, 3))
    tx, ty = pr.txy.T
    cx_on, cy_on = pr.clamped.T
    # J[0, 2] = -fx tx / z with tx = x / z unless clamped (then constant)
    g_pc[:, 0] = G_J[:, 0, 2] * np.where(cx_on, 0.0, -fx / zs**2) + g_mx * fx / zs
    g_pc[:, 1] = G_J[:, 1, 2] * np.where(cy_on, 0.0, -fy / zs**2) + g_my * fy / zs
    g_pc[:, 2] = (G_J[:, 0, 0] * (-fx / zs**2) + G_J[:, 0, 2] * np.where(cx_on, 1.0, 2.0) * fx * tx / zs**2
                  + G_J[:, 1, 1] * (-fy / zs**2) + G_J[:, 1, 2] * np.where(cy_on, 1.0, 2.0) * fy * ty / zs**2
                  - g_mx * fx * x / zs**2 - g_my * fy * y / zs**2 + g_depth_feat)
    grads.mu[:] = g_pc @ Wr

    culled = ~pr.visible
    for arr in (grads.mu, grads.opacity_logit, grads.log_scale, grads.quat, grads.color):
        arr[culled] = 0.0
    if grad2d_terms == "image" and G[:, 3:].any():
        G_img = G.copy()
        G_img[:, 3:] = 0.0
        g_mx, g_my = rast.backward(G_img, feats, gmap.sky)[2].T
    grad2d = np.hypot(g_mx * 0.5 * W, g_my * 0.5 * H)
    grad2d[culled] = 0.0
    return RenderResult(loss, grads, grad2d, rast.touched(), buf, terms)
