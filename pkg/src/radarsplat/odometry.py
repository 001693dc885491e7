"""Geometry-based radar odometry.

The per-pair estimator is the distance-weighted Kabsch solve iterated to
convergence (ICP style) from a constant-acceleration motion prior. The
refined pose is kept only when it lowers the Cauchy-Schwarz divergence
between the source and target point mixtures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import RadarFrame, Se3Pose, Trajectory, from_euler, to_euler, transform_frame
from .errors import DegenerateGeometry, EmptyFrame, GimbalLock, RadarSplatError
from .preprocess import PreparedFrame, prepare_frame
from .spatial import nearest
from .supervision import (
    cluster_weighted_distance,
    column_occupancy_score,
    cs_divergence,
    feature_contrast_score,
    gmm_from_frame,
    motion_smoothness,
    polar_occupancy,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Correspondences:
    src_idx: np.ndarray
    tgt_idx: np.ndarray
    distances: np.ndarray

    @property
    def d_max(self) -> float:
        return float(self.distances.max()) if len(self.distances) else 0.0

    def __len__(self) -> int:
        return len(self.src_idx)

    def weights(self) -> np.ndarray:
        """(d_max - d_i) / d_max; uniform when every distance is zero."""
        dm = self.d_max
        if dm <= 0.0:
            return np.ones(len(self))
        return (dm - self.distances) / dm

    def subset(self, mask: np.ndarray) -> "Correspondences":
        return Correspondences(self.src_idx[mask], self.tgt_idx[mask], self.distances[mask])


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    pose: Se3Pose
    refined: bool
    objective: float


@dataclass(eq=False)
class Refinement:
    pose: Se3Pose
    ok: bool
    iterations: int
    # weighted objective before / after each Kabsch solve
    objectives: list[tuple[float, float]] = field(default_factory=list)


def nearest_correspondences(src_tf: RadarFrame, tgt: RadarFrame) -> Correspondences:
    if len(src_tf) == 0 or len(tgt) == 0:
        raise EmptyFrame("correspondences need two non-empty frames")
    idx, dist = nearest(src_tf.positions, tgt.positions)
    return Correspondences(np.arange(len(src_tf)), idx, dist)


def kabsch_objective(pose: Se3Pose, p: np.ndarray, q: np.ndarray, w: np.ndarray) -> float:
    r = pose.apply(p) - q
    return float(np.sum(w * (r**2).sum(1)))


def solve_weighted_kabsch(p: np.ndarray, q: np.ndarray, w: np.ndarray) -> Se3Pose:
    """argmin over (R, t) of sum w_i |R p_i + t - q_i|^2, with det(R) = +1."""
    w = np.asarray(w, dtype=float)
    active = w > 0
    if active.sum() < 3 or w.sum() <= 0:
        raise DegenerateGeometry("need at least three pairs with positive weight")
    ws = w / w.sum()
    pc = ws @ p
    qc = ws @ q
    P = p - pc
    Q = q - qc
    sv = np.linalg.svd((P[active] * np.sqrt(ws[active, None])), compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry("weighted source points are collinear or coincident")
    H = (P * ws[:, None]).T @ Q
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T)) or 1.0])
    R = V @ D @ U.T
    return Se3Pose(R, qc - R @ pc)


def weighted_kabsch(pairs: Correspondences, src_tf: RadarFrame, tgt: RadarFrame) -> Se3Pose:
    """Pose increment aligning matched source points onto their targets,
    weighting each pair by (d_max - d_i) / d_max."""
    p = src_tf.positions[pairs.src_idx]
    q = tgt.positions[pairs.tgt_idx]
    return solve_weighted_kabsch(p, q, pairs.weights())


def reject_outliers(pairs: Correspondences, ratio: float) -> Correspondences:
    """Drop pairs farther than ``ratio`` x median distance (ratio <= 0 disables)."""
    if ratio <= 0 or len(pairs) == 0:
        return pairs
    med = float(np.median(pairs.distances))
    if med <= 0:
        return pairs
    return pairs.subset(pairs.distances <= ratio * med)


def refine_pose(
    src: RadarFrame,
    tgt: RadarFrame,
    t_init: Se3Pose,
    max_iters: int = 30,
    tol: float = 1e-4,
    reject_ratio: float = 3.0,
) -> Refinement:
    """Iterate transform -> correspond -> weighted Kabsch -> left-compose."""
    pose = t_init
    history: list[tuple[float, float]] = []
    for it in range(1, max_iters + 1):
        src_tf = transform_frame(src, pose)
        pairs = reject_outliers(nearest_correspondences(src_tf, tgt), reject_ratio)
        try:
            delta = weighted_kabsch(pairs, src_tf, tgt)
        except DegenerateGeometry:
            log.debug("refine_pose: degenerate geometry at iteration %d", it)
            return Refinement(t_init, False, it, history)
        p = src_tf.positions[pairs.src_idx]
        q = tgt.positions[pairs.tgt_idx]
        w = pairs.weights()
        history.append((kabsch_objective(Se3Pose.identity(), p, q, w), kabsch_objective(delta, p, q, w)))
        pose = delta @ pose
        if np.linalg.norm(delta.translation) < tol and delta.angle < tol:
            return Refinement(pose, True, it, history)
    return Refinement(pose, True, max_iters, history)


def alignment_divergence(src: RadarFrame, tgt: RadarFrame, pose: Se3Pose, bandwidth: float = 0.5) -> float:
    return cs_divergence(gmm_from_frame(transform_frame(src, pose), bandwidth), gmm_from_frame(tgt, bandwidth))


def select_pose(src: RadarFrame, tgt: RadarFrame, t_a: Se3Pose, t_b: Se3Pose, bandwidth: float = 0.5) -> PoseEstimate:
    """Keep ``t_a`` unless ``t_b`` gives a strictly lower CS divergence."""
    g_t = gmm_from_frame(tgt, bandwidth)
    d_a = cs_divergence(gmm_from_frame(transform_frame(src, t_a), bandwidth), g_t)
    if t_b is t_a:
        return PoseEstimate(t_a, False, d_a)
    d_b = cs_divergence(gmm_from_frame(transform_frame(src, t_b), bandwidth), g_t)
    if d_b < d_a:
        return PoseEstimate(t_b, True, d_b)
    return PoseEstimate(t_a, False, d_a)


def predict_initial(tail: Sequence[Se3Pose]) -> Se3Pose:
    """Motion prior from up to the last two relative poses.

    none -> identity, one -> repeat it, two -> extrapolate Euler angles and
    translation linearly (constant acceleration of the pose sequence).
    """
    tail = list(tail)[-2:]
    if not tail:
        return Se3Pose.identity()
    if len(tail) == 1:
        return tail[0]
    a, b = tail
    t = 2 * b.translation - a.translation
    try:
        ea, eb = np.array(to_euler(a.rotation)), np.array(to_euler(b.rotation))
    except GimbalLock:
        return Se3Pose(b.rotation, t)
    d = (eb - ea + np.pi) % (2 * np.pi) - np.pi
    return Se3Pose(from_euler(*(eb + d)), t)


def teacher_guidance_score(
    src: RadarFrame,
    tgt: RadarFrame,
    pose: Se3Pose,
    bandwidth: float = 0.5,
    iterations: int = 1,
    reject_ratio: float = 0.0,
) -> tuple[float, float, Se3Pose, bool]:
    """Teacher-guidance term with its pieces.

    Refines ``pose`` with ``iterations`` weighted Kabsch solves, then returns
    (loss, cs divergence of ``pose``, teacher pose, accepted) where the loss
    is the entrywise L1 distance between the rotations plus the L1 distance
    between translations, counted only when the teacher pose is accepted.
    """
    ref = refine_pose(src, tgt, pose, max_iters=iterations, tol=0.0, reject_ratio=reject_ratio)
    g_t = gmm_from_frame(tgt, bandwidth)
    d_net = cs_divergence(gmm_from_frame(transform_frame(src, pose), bandwidth), g_t)
    d_tg = cs_divergence(gmm_from_frame(transform_frame(src, ref.pose), bandwidth), g_t)
    accepted = bool(ref.ok and d_net > d_tg)
    if not accepted:
        return 0.0, d_net, ref.pose, False
    loss = np.abs(pose.rotation - ref.pose.rotation).sum() + np.abs(pose.translation - ref.pose.translation).sum()
    return float(loss), d_net, ref.pose, True


@dataclass(frozen=True)
class OdometryConfig:
    z_min: float = -3.0
    z_max: float = 3.0
    dbscan_eps: float = 3.0
    dbscan_min_pts: int = 3
    sample_n: int = 256
    max_iters: int = 30
    tol: float = 1e-4
    reject_ratio: float = 3.0
    gmm_bandwidth: float = 0.5
    cwd_delta: int = 2
    cwd_eps: float = 0.0225
    cwd_radius: float = 1.0
    cwd_weighting: str = "literal"
    occ_rings: int = 32
    occ_sectors: int = 72
    occ_rmax: float = 80.0
    eps_r: float = 0.01
    eps_t: float = 0.05
    lambda_cm: float = 1.0
    tau: float = 0.07


@dataclass(eq=False)
class PairDiagnostics:
    frame: int
    refined: bool
    cs_div: float
    cwd: float
    occ: float
    motion: float
    failed: str = ""


@dataclass(eq=False)
class OdometryResult:
    trajectory: Trajectory
    estimates: list[PoseEstimate]
    diagnostics: list[PairDiagnostics]


def score_pair(
    src: PreparedFrame,
    tgt: PreparedFrame,
    pose: Se3Pose,
    cfg: OdometryConfig = OdometryConfig(),
    history: Sequence[Se3Pose] = (),
    feat_s: np.ndarray | None = None,
    feat_t: np.ndarray | None = None,
) -> dict[str, float]:
    """All six supervision terms for one pair under ``pose``.

    ``history`` holds up to two earlier relative poses for the motion term
    (0 when fewer are given). Features default to the per-point (rrv, rcs).
    """
    src_tf = transform_frame(src.frame, pose)
    cwd = cluster_weighted_distance(
        src_tf, tgt.frame, src.clusters, tgt.clusters, cfg.cwd_delta, cfg.cwd_eps, cfg.cwd_radius, cfg.cwd_weighting
    )
    occ = column_occupancy_score(
        polar_occupancy(src_tf, cfg.occ_rings, cfg.occ_sectors, cfg.occ_rmax),
        polar_occupancy(tgt.frame, cfg.occ_rings, cfg.occ_sectors, cfg.occ_rmax),
    )
    tg, ga, _, _ = teacher_guidance_score(src.frame, tgt.frame, pose, cfg.gmm_bandwidth)
    fs = src.frame.features if feat_s is None else feat_s
    ft = tgt.frame.features if feat_t is None else feat_t
    fc = feature_contrast_score(src_tf, tgt.frame, fs, ft, cfg.tau)
    hist = list(history)[-2:]
    cm = motion_smoothness(hist + [pose], cfg.eps_r, cfg.eps_t, cfg.lambda_cm) if len(hist) == 2 else 0.0
    return {"cd": cwd, "co": occ, "tg": tg, "ga": ga, "fc": fc, "cm": cm}


def prepare(frame: RadarFrame, cfg: OdometryConfig = OdometryConfig()) -> PreparedFrame:
    """Height filter, cluster and sample one frame with the configured parameters."""
    return prepare_frame(frame, cfg.z_min, cfg.z_max, cfg.dbscan_eps, cfg.dbscan_min_pts, cfg.sample_n)


def run_odometry(frames: Sequence[RadarFrame], cfg: OdometryConfig = OdometryConfig()) -> OdometryResult:
    """Estimate the trajectory of a frame sequence, anchored at the first frame."""
    if len(frames) < 2:
        raise ValueError("odometry needs at least two frames")
    prepared: list[PreparedFrame | None] = []
    for k, f in enumerate(frames):
        try:
            prepared.append(prepare(f, cfg))
        except RadarSplatError as exc:
            log.warning("frame=%d stage=preprocess error=%s", k, exc)
            prepared.append(None)

    rel: list[Se3Pose] = []
    estimates: list[PoseEstimate] = []
    diags: list[PairDiagnostics] = []
    for k in range(1, len(frames)):
        init = predict_initial(rel)
        src, tgt = prepared[k], prepared[k - 1]
        if src is None or tgt is None:
            rel.append(init)
            estimates.append(PoseEstimate(init, False, float("nan")))
            diags.append(PairDiagnostics(k, False, float("nan"), float("nan"), float("nan"), float("nan"), "empty"))
            continue
        try:
            ref = refine_pose(src.frame, tgt.frame, init, cfg.max_iters, cfg.tol, cfg.reject_ratio)
            est = select_pose(src.frame, tgt.frame, init, ref.pose if ref.ok else init, cfg.gmm_bandwidth)
        except RadarSplatError as exc:
            log.warning("frame=%d stage=refine error=%s", k, exc)
            rel.append(init)
            estimates.append(PoseEstimate(init, False, float("nan")))
            diags.append(PairDiagnostics(k, False, float("nan"), float("nan"), float("nan"), float("nan"), str(exc)))
            continue
        src_tf = transform_frame(src.frame, est.pose)
        cwd = cluster_weighted_distance(
            src_tf, tgt.frame, src.clusters, tgt.clusters,
            cfg.cwd_delta, cfg.cwd_eps, cfg.cwd_radius, cfg.cwd_weighting,
        )
        occ = column_occupancy_score(
            polar_occupancy(src_tf, cfg.occ_rings, cfg.occ_sectors, cfg.occ_rmax),
            polar_occupancy(tgt.frame, cfg.occ_rings, cfg.occ_sectors, cfg.occ_rmax),
        )
        try:
            motion = motion_smoothness(rel[-2:] + [est.pose], cfg.eps_r, cfg.eps_t, cfg.lambda_cm) if len(rel) >= 2 else 0.0
        except GimbalLock:
            motion = float("nan")
        rel.append(est.pose)
        estimates.append(est)
        diags.append(PairDiagnostics(k, est.refined, est.objective, cwd, occ, motion))
    ts = np.array([f.timestamp for f in frames])
    if not np.all(np.diff(ts) > 0):
        ts = np.arange(len(frames), dtype=float)
    return OdometryResult(Trajectory.from_relative(ts, rel), estimates, diags)
