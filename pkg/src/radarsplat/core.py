"""Geometric value types: rigid transforms, radar frames, trajectories, cameras.

Frames and units
    Poses map points from their source frame into their target frame,
    ``x_target = R @ x_source + t``. Translations are meters, angles radians.
    The radar sensor frame is x-forward, y-left, z-up. The camera frame is
    x-right, y-down, z-forward (optical axis). Quaternions are (w, x, y, z).

All types are immutable; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, GimbalLock

# compositions before a rotation is snapped back onto SO(3)
REORTHO_CHAIN = 1000
GIMBAL_TOL = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion; q is normalized first."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """(w, x, y, z) with w >= 0 (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def axis_angle_to_matrix(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    w = np.asarray(axis_angle, dtype=float)
    th = float(np.linalg.norm(w))
    if th < 1e-15:
        return np.eye(3) + skew(w)
    K = skew(w / th)
    return np.eye(3) + math.sin(th) * K + (1.0 - math.cos(th)) * (K @ K)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, robust near 0 and pi."""
    c = (np.trace(R) - 1.0) * 0.5
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(math.atan2(s, c))


def from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic Z-Y-X: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`from_euler`; returns (roll, pitch, yaw).

    Raises GimbalLock when |pitch| is within 1e-6 rad of pi/2, where roll and
    yaw are no longer separable.
    """
    R = np.asarray(R, dtype=float)
    pitch = math.atan2(-R[2, 0], math.hypot(R[0, 0], R[1, 0]))
    if abs(abs(pitch) - math.pi / 2) < GIMBAL_TOL:
        raise GimbalLock(f"pitch {pitch!r} is within {GIMBAL_TOL} of +-pi/2")
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


@dataclass(frozen=True, eq=False)
class Se3Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    # number of compositions folded into this pose since the last re-orthonormalization
    chain: int = field(default=0, compare=False)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Se3Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quaternion(cls, q: Sequence[float], t: Sequence[float]) -> "Se3Pose":
        return cls(quat_to_matrix(np.asarray(q)), np.asarray(t))

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float, t: Sequence[float] = (0.0, 0.0, 0.0)) -> "Se3Pose":
        return cls(from_euler(roll, pitch, yaw), np.asarray(t))

    @classmethod
    def random(cls, rng: np.random.Generator, max_translation: float = 1.0, max_angle: float = math.pi) -> "Se3Pose":
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-max_angle, max_angle)
        t = rng.uniform(-max_translation, max_translation, size=3)
        return cls(axis_angle_to_matrix(axis * angle), t)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def quaternion(self) -> np.ndarray:
        return matrix_to_quat(self.rotation)

    @property
    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def euler(self) -> tuple[float, float, float]:
        return to_euler(self.rotation)

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        """``(self ∘ other)(x) = self(other(x))``."""
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        chain = self.chain + other.chain + 1
        if chain > REORTHO_CHAIN:
            R, chain = orthonormalize(R), 0
        return Se3Pose(R, t, chain)

    __matmul__ = compose

    def inverse(self) -> "Se3Pose":
        Rt = self.rotation.T
        return Se3Pose(Rt, -Rt @ self.translation, self.chain)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def allclose(self, other: "Se3Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self) -> str:
        return f"Se3Pose(euler={np.round(np.degrees(self._safe_euler()), 4)}, t={np.round(self.translation, 6)})"

    def _safe_euler(self):
        try:
            return np.array(self.euler())
        except GimbalLock:
            return np.full(3, np.nan)


def pose_error(a: Se3Pose, b: Se3Pose) -> tuple[float, float]:
    """(translation error m, rotation error rad) of ``a^-1 ∘ b``."""
    d = a.inverse() @ b
    return float(np.linalg.norm(d.translation)), d.angle


class RadarPoint(NamedTuple):
    position: np.ndarray
    rrv: float
    rcs: float


@dataclass(frozen=True, eq=False)
class RadarFrame:
    """One radar sweep stored column-wise: positions (N, 3), rrv (N,), rcs (N,)."""

    timestamp: float
    positions: np.ndarray
    rrv: np.ndarray
    rcs: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        n = len(pos)
        rrv = np.zeros(n) if self.rrv is None else np.array(self.rrv, dtype=float).reshape(-1)
        rcs = np.zeros(n) if self.rcs is None else np.array(self.rcs, dtype=float).reshape(-1)
        if len(rrv) != n or len(rcs) != n:
            raise DimensionMismatch(f"positions {n}, rrv {len(rrv)}, rcs {len(rcs)}")
        if not (np.isfinite(pos).all() and np.isfinite(rrv).all() and np.isfinite(rcs).all()):
            raise ValueError("radar frame contains non-finite values")
        for a in (pos, rrv, rcs):
            a.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "rrv", rrv)
        object.__setattr__(self, "rcs", rcs)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def from_points(cls, positions, rrv=None, rcs=None, timestamp: float = 0.0) -> "RadarFrame":
        return cls(timestamp, positions, rrv, rcs)

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[RadarPoint]:
        for p, v, s in zip(self.positions, self.rrv, self.rcs):
            yield RadarPoint(p, float(v), float(s))

    @property
    def features(self) -> np.ndarray:
        """(N, 2) per-point (rrv, rcs)."""
        return np.column_stack([self.rrv, self.rcs])

    def subset(self, idx) -> "RadarFrame":
        idx = np.asarray(idx)
        return RadarFrame(self.timestamp, self.positions[idx], self.rrv[idx], self.rcs[idx])

    def with_positions(self, positions: np.ndarray) -> "RadarFrame":
        return RadarFrame(self.timestamp, positions, self.rrv, self.rcs)


def transform_frame(frame: RadarFrame, pose: Se3Pose) -> RadarFrame:
    return frame.with_positions(pose.apply(frame.positions))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped poses expressed in one world frame (sensor-to-world)."""

    timestamps: np.ndarray
    poses: tuple[Se3Pose, ...]

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        if len(ts) != len(self.poses):
            raise DimensionMismatch(f"{len(ts)} timestamps for {len(self.poses)} poses")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", tuple(self.poses))

    @classmethod
    def from_relative(cls, timestamps, relative: Sequence[Se3Pose], origin: Se3Pose | None = None) -> "Trajectory":
        """Chain relative poses; ``relative[k]`` maps frame k+1 into frame k."""
        pose = origin or Se3Pose.identity()
        poses = [pose]
        for rel in relative:
            pose = pose @ rel
            poses.append(pose)
        return cls(timestamps, poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> Se3Pose:
        return self.poses[i]

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def relative(self) -> list[Se3Pose]:
        return [a.inverse() @ b for a, b in zip(self.poses[:-1], self.poses[1:])]

    def path_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum()) if len(self) > 1 else 0.0

    def transformed(self, pose: Se3Pose) -> "Trajectory":
        """Left-multiply every pose (change of world frame)."""
        return Trajectory(self.timestamps, [pose @ p for p in self.poses])

    def anchored(self) -> "Trajectory":
        """Same motion re-expressed so the first pose is the identity."""
        return self.transformed(self.poses[0].inverse())


# radar/body frame (x fwd, y left, z up) -> camera optical frame (x right, y down, z fwd)
BODY_TO_OPTICAL = Se3Pose(np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]), np.zeros(3))


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera. Pixel (row r, col c) has its center at u = c + 0.5, v = r + 0.5."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: Se3Pose

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @classmethod
    def from_body_pose(cls, body_to_world: Se3Pose, width: int, height: int, fov_x_deg: float = 90.0) -> "Camera":
        """Forward-looking camera mounted on a body with x-forward, y-left, z-up."""
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
        w2c = BODY_TO_OPTICAL @ body_to_world.inverse()
        return cls(f, f, width / 2.0, height / 2.0, width, height, w2c)

    def with_pose(self, world_to_camera: Se3Pose) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, world_to_camera)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.world_to_camera.inverse().translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.world_to_camera.apply(points)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (uv pixel coords (N, 2), camera-frame depth (N,))."""
        pc = self.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.column_stack([u, v]), z

    def pixel_rays(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Camera-frame ray directions with unit z for the given pixel centers."""
        u = np.asarray(cols, dtype=float) + 0.5
        v = np.asarray(rows, dtype=float) + 0.5
        return np.column_stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)])

    def unproject(self, rows: np.ndarray, cols: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Pixel centers with z-depth -> world points."""
        pc = self.pixel_rays(rows, cols) * np.asarray(depth, dtype=float)[:, None]
        return self.world_to_camera.inverse().apply(pc)
