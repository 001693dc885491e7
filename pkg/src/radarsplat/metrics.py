"""Trajectory, point-map and image quality metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation, Slerp

from .core import Se3Pose, Trajectory, rotation_angle
from .errors import DimensionMismatch, TooShort
from .imaging import psnr, ssim

RPE_LENGTHS = tuple(range(20, 161, 20))
FSCORE_THRESHOLD = 0.3
MAX_SKEW = 0.05

__all__ = [
    "OdomReport", "MapReport", "associate", "rpe_kitti", "rpe_framewise", "ate", "align_rigid",
    "chamfer_l1", "mhd", "fscore", "psnr", "ssim", "RPE_LENGTHS", "FSCORE_THRESHOLD",
]


def _fmt(d: dict) -> str:
    return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items())


@dataclass(frozen=True)
class OdomReport:
    t_rel: float  # m/m
    r_rel: float  # deg/m
    rpe_trans: float  # m
    rpe_rot: float  # deg
    ate: float  # m

    def as_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        return _fmt(self.as_dict())


@dataclass(frozen=True)
class MapReport:
    chamfer_l1: float
    mhd: float
    fscore: float
    psnr: float = float("nan")
    ssim: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        return _fmt(self.as_dict())


# ------------------------------------------------------------------ association


def _interp_pose(traj: Trajectory, t: np.ndarray) -> list[Se3Pose]:
    ts = traj.timestamps
    rots = Rotation.from_matrix(np.array([p.rotation for p in traj.poses]))
    R = Slerp(ts, rots)(t).as_matrix()
    pos = traj.positions
    tr = np.column_stack([np.interp(t, ts, pos[:, i]) for i in range(3)])
    return [Se3Pose(r, x) for r, x in zip(R, tr)]


def associate(est: Trajectory, gt: Trajectory, max_skew: float = MAX_SKEW, interp: bool = False):
    """Pair estimated and ground-truth poses by timestamp.

    Nearest-timestamp matching keeps pairs within ``max_skew`` seconds. With
    ``interp`` the ground truth is instead interpolated (linear translation,
    spherical rotation) at every estimated timestamp inside its time span.
    Returns two trajectories of equal length.
    """
    te, tg = est.timestamps, gt.timestamps
    if interp:
        keep = (te >= tg[0]) & (te <= tg[-1])
        idx = np.flatnonzero(keep)
        if len(tg) < 2:
            raise TooShort("need >= 2 ground-truth poses to interpolate")
        return Trajectory(te[idx], [est.poses[i] for i in idx]), Trajectory(te[idx], _interp_pose(gt, te[idx]))
    j = np.clip(np.searchsorted(tg, te), 1, len(tg) - 1) if len(tg) > 1 else np.zeros(len(te), dtype=np.int64)
    if len(tg) > 1:
        j = np.where(np.abs(tg[j - 1] - te) <= np.abs(tg[j] - te), j - 1, j)
    ok = np.abs(tg[j] - te) <= max_skew
    # one ground-truth pose may serve only one estimate
    _, first = np.unique(j[ok], return_index=True)
    ei = np.flatnonzero(ok)[first]
    gi = j[ei]
    return (Trajectory(te[ei], [est.poses[i] for i in ei]), Trajectory(tg[gi], [gt.poses[i] for i in gi]))


def _check_pair(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise DimensionMismatch(f"{len(est)} estimated vs {len(gt)} ground-truth poses; associate first")


# ------------------------------------------------------------------ RPE / ATE


def _cumulative_distance(traj: Trajectory) -> np.ndarray:
    steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def rpe_kitti(est: Trajectory, gt: Trajectory, lengths=RPE_LENGTHS) -> tuple[float, float]:
    """Segment drift (t_rel m/m, r_rel deg/m) over fixed path lengths along the ground truth.

    Every start index is used; a segment ends at the first pose whose arc
    length exceeds the start's by more than the segment length. Per length,
    errors divided by the length are combined by RMSE; the final values
    average over lengths that produced at least one segment.
    """
    _check_pair(est, gt)
    dist = _cumulative_distance(gt)
    if dist[-1] < min(lengths):
        raise TooShort(f"ground-truth path is {dist[-1]:.2f} m, shorter than {min(lengths)} m")
    t_rel, r_rel = [], []
    for length in lengths:
        ends = np.searchsorted(dist, dist + length, side="right")
        t_err, r_err = [], []
        for first, last in enumerate(ends):
            if last >= len(gt):
                continue
            dg = gt[first].inverse() @ gt[last]
            de = est[first].inverse() @ est[last]
            e = de.inverse() @ dg
            t_err.append(np.linalg.norm(e.translation) / length)
            r_err.append(math.degrees(rotation_angle(e.rotation)) / length)
        if t_err:
            t_rel.append(math.sqrt(np.mean(np.square(t_err))))
            r_rel.append(math.sqrt(np.mean(np.square(r_err))))
    return float(np.mean(t_rel)), float(np.mean(r_rel))


def rpe_framewise(est: Trajectory, gt: Trajectory) -> tuple[float, float]:
    """RMSE of consecutive-frame relative pose errors: (metres, degrees)."""
    _check_pair(est, gt)
    if len(gt) < 2:
        raise TooShort("need >= 2 poses")
    t_err, r_err = [], []
    for de, dg in zip(est.relative(), gt.relative()):
        e = de.inverse() @ dg
        t_err.append(np.linalg.norm(e.translation))
        r_err.append(math.degrees(rotation_angle(e.rotation)))
    return float(math.sqrt(np.mean(np.square(t_err)))), float(math.sqrt(np.mean(np.square(r_err))))


def align_rigid(src: np.ndarray, dst: np.ndarray) -> Se3Pose:
    """Least-squares rotation and translation (no scale) mapping ``src`` points onto ``dst``."""
    cs, cd = src.mean(0), dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return Se3Pose(R, cd - R @ cs)


def ate(est: Trajectory, gt: Trajectory, align: bool = True) -> float:
    """Position RMSE, after rigid alignment of the estimate onto the ground truth when ``align``."""
    _check_pair(est, gt)
    if len(gt) < 2:
        raise TooShort("need >= 2 poses")
    pe, pg = est.positions, gt.positions
    if align:
        pe = align_rigid(pe, pg).apply(pe)
    return float(math.sqrt(np.mean(np.sum((pe - pg) ** 2, axis=1))))


def odom_report(est: Trajectory, gt: Trajectory, lengths=RPE_LENGTHS) -> OdomReport:
    try:
        t_rel, r_rel = rpe_kitti(est, gt, lengths)
    except TooShort:
        t_rel = r_rel = float("nan")
    rt, rr = rpe_framewise(est, gt)
    return OdomReport(t_rel, r_rel, rt, rr, ate(est, gt))


# ------------------------------------------------------------------ point maps


def _nn_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be non-empty")
    _, idx = cKDTree(b).query(a)
    # recompute exactly so results do not depend on the tree's arithmetic
    return np.linalg.norm(a - b[idx], axis=1)


def chamfer_l1(a, b, squared: bool = False) -> float:
    """Mean of the two directed mean nearest-neighbor (Euclidean) distances."""
    da, db = _nn_dist(a, b), _nn_dist(b, a)
    if squared:
        da, db = da**2, db**2
    return float(0.5 * (da.mean() + db.mean()))


def mhd(a, b) -> float:
    """Modified Hausdorff distance: the larger directed mean NN distance."""
    return float(max(_nn_dist(a, b).mean(), _nn_dist(b, a).mean()))


def fscore(a, b, thr: float = FSCORE_THRESHOLD) -> float:
    """Harmonic mean of precision (a -> b) and recall (b -> a) at distance ``thr``."""
    p = float(np.mean(_nn_dist(a, b) < thr))
    r = float(np.mean(_nn_dist(b, a) < thr))
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def map_report(est_points, gt_points, thr: float = FSCORE_THRESHOLD, image=None, reference=None) -> MapReport:
    ps = ss = float("nan")
    if image is not None and reference is not None:
        ps, ss = psnr(image, reference), ssim(image, reference)
    return MapReport(chamfer_l1(est_points, gt_points), mhd(est_points, gt_points),
                     fscore(est_points, gt_points, thr), ps, ss)
