"""Gaussian map container: anisotropic splats stored column-wise."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from ..spatial import knn

MIN_INIT_SCALE = 0.02
MAX_INIT_SCALE = 5.0
FALLBACK_SCALE = 1.0
INIT_OPACITY = 0.1


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(N, 4) (w, x, y, z) quaternions, normalized on the fly -> (N, 3, 3)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True, eq=False)
class Gaussian:
    """One splat. Opacity is stored as a logit and scale as log-scale."""

    mu: np.ndarray
    opacity_logit: float
    log_scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    color: np.ndarray
    sky: bool = False

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation[None])[0]


@dataclass(frozen=True, eq=False)
class GaussianMap:
    mu: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    log_scale: np.ndarray  # (N, 3)
    quat: np.ndarray  # (N, 4)
    color: np.ndarray  # (N, 3)
    sky: np.ndarray  # (N,) bool
    uid: np.ndarray  # (N,) int64, stable identity across densification

    def __post_init__(self):
        n = len(self.mu)
        for f in fields(self):
            a = getattr(self, f.name)
            if len(a) != n:
                raise ValueError(f"{f.name} has {len(a)} rows, expected {n}")

    @classmethod
    def empty(cls) -> "GaussianMap":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
                   np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianMap":
        gs = list(gaussians)
        if not gs:
            return cls.empty()
        return cls(
            np.array([g.mu for g in gs], dtype=float),
            np.array([g.opacity_logit for g in gs], dtype=float),
            np.array([g.log_scale for g in gs], dtype=float),
            np.array([g.rotation for g in gs], dtype=float),
            np.array([g.color for g in gs], dtype=float),
            np.array([g.sky for g in gs], dtype=bool),
            np.arange(len(gs), dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], float(self.opacity_logit[i]), self.log_scale[i], self.quat[i], self.color[i],
                        bool(self.sky[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def gaussians(self) -> list[Gaussian]:
        return list(self)

    @property
    def sky_mask(self) -> np.ndarray:
        return self.sky

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def next_uid(self) -> int:
        return int(self.uid.max()) + 1 if len(self.uid) else 0

    def rotations(self) -> np.ndarray:
        return quat_to_rotmat(self.quat) if len(self) else np.zeros((0, 3, 3))

    def covariances(self) -> np.ndarray:
        if not len(self):
            return np.zeros((0, 3, 3))
        M = self.rotations() * self.scale[:, None, :]
        return M @ np.swapaxes(M, 1, 2)

    def select(self, idx) -> "GaussianMap":
        idx = np.asarray(idx)
        return GaussianMap(*(getattr(self, f.name)[idx] for f in fields(self)))

    def concat(self, other: "GaussianMap") -> "GaussianMap":
        return GaussianMap(*(np.concatenate([getattr(self, f.name), getattr(other, f.name)]) for f in fields(self)))

    def replace(self, **kw) -> "GaussianMap":
        return replace(self, **kw)

    def appended(self, mu, opacity_logit, log_scale, quat, color, sky=None) -> "GaussianMap":
        """Copy with new gaussians appended under fresh uids."""
        n = len(mu)
        sky = np.zeros(n, dtype=bool) if sky is None else np.asarray(sky, dtype=bool)
        new = GaussianMap(
            np.asarray(mu, float).reshape(n, 3), np.asarray(opacity_logit, float).reshape(n),
            np.asarray(log_scale, float).reshape(n, 3), np.asarray(quat, float).reshape(n, 4),
            np.asarray(color, float).reshape(n, 3), sky, np.arange(self.next_uid, self.next_uid + n, dtype=np.int64),
        )
        return self.concat(new)


def covariance(g: Gaussian) -> np.ndarray:
    """Sigma = R S S^T R^T."""
    M = g.rotation_matrix * g.scale[None, :]
    return M @ M.T


def init_scales(points: np.ndarray) -> np.ndarray:
    """Isotropic scale per point: mean distance to its 3 nearest neighbors."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 4:
        return np.full(len(points), FALLBACK_SCALE)
    dist, _ = knn(points, 3)
    return np.clip(dist.mean(1), MIN_INIT_SCALE, MAX_INIT_SCALE)


def init_from_points(points, colors=None, opacity: float = INIT_OPACITY, uid_start: int = 0) -> GaussianMap:
    """Isotropic, identity-rotation gaussians centered on ``points``."""
    pts = np.asarray(points.positions if hasattr(points, "positions") else points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("need at least one point")
    n = len(pts)
    cols = np.full((n, 3), 0.5) if colors is None else np.asarray(colors, dtype=float).reshape(n, 3)
    s = init_scales(pts)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return GaussianMap(
        pts.copy(), np.full(n, math.log(opacity / (1 - opacity))), np.repeat(np.log(s)[:, None], 3, axis=1),
        quat, cols.copy(), np.zeros(n, dtype=bool), np.arange(uid_start, uid_start + n, dtype=np.int64),
    )


@dataclass(frozen=True, eq=False)
class ViewPriors:
    """Supervision for one camera view: color image, depth, world-frame normals and 2D sky mask."""

    image: np.ndarray  # (H, W, 3)
    depth_prior: np.ndarray  # (H, W)
    normal_prior: np.ndarray  # (H, W, 3)
    sky2d: np.ndarray  # (H, W) bool

    def __post_init__(self):
        h, w = self.depth_prior.shape
        if self.image.shape != (h, w, 3) or self.normal_prior.shape != (h, w, 3) or self.sky2d.shape != (h, w):
            raise ValueError("prior buffers must share one H x W shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth_prior.shape

    def check_camera(self, cam) -> None:
        if self.shape != (cam.height, cam.width):
            from ..errors import DimensionMismatch

            raise DimensionMismatch(f"priors are {self.shape}, camera is {(cam.height, cam.width)}")
