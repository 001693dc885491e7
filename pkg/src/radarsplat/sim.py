"""Synthetic world, radar and camera oracle.

A scene is a set of simple primitives (ground plane, boxes, walls,
cylinders) sampled into a dense reference cloud. Radar frames are drawn
from the visible part of that cloud with range/azimuth noise; camera
priors (color, depth, normal, sky) come from point splatting the same
cloud.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .core import BODY_TO_OPTICAL, Camera, RadarFrame, Se3Pose, Trajectory, from_euler
from .errors import EmptyFrame
from .gaussmap.model import ViewPriors
from .io import (
    read_frame_ply,
    read_kitti,
    read_pfm,
    read_pgm_mask,
    read_ppm,
    write_frame_ply,
    write_kitti,
    write_pfm,
    write_pgm_mask,
    write_points_ply,
    write_ppm,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

GROUND, STRUCTURE = 0, 1
KINDS = ("ground", "box", "wall", "cylinder")
SKY_COLOR = np.array([0.62, 0.76, 0.95])
LIGHT_DIR = np.array([0.3, 0.2, 1.0]) / np.linalg.norm([0.3, 0.2, 1.0])
AMBIENT = 0.35


@dataclass(frozen=True)
class Primitive:
    """One surface primitive.

    ground: dims (length_x, length_y), plane z = 0 centered at the origin.
    box / wall: dims (length_x, length_y, height), resting on z = 0 (bottom face not sampled).
    cylinder: dims (radius, height), axis along z from z = 0 (side and top cap).
    ``position`` and ``yaw_deg`` place the primitive in the world.
    """

    kind: str
    dims: tuple
    position: tuple = (0.0, 0.0, 0.0)
    yaw_deg: float = 0.0
    albedo: tuple = (0.5, 0.5, 0.5)
    density: float = 16.0  # points per m^2
    texture: float = 0.15  # amplitude of the checker modulation of albedo

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        want = {"ground": 2, "box": 3, "wall": 3, "cylinder": 2}[self.kind]
        if len(self.dims) != want or min(self.dims) <= 0:
            raise ValueError(f"{self.kind} needs {want} positive dimensions, got {self.dims}")
        if self.density <= 0:
            raise ValueError("density must be positive")

    @property
    def pose(self) -> Se3Pose:
        return Se3Pose(from_euler(0.0, 0.0, math.radians(self.yaw_deg)), np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Scene:
    """Dense reference cloud with per-point normal, albedo, semantic label and sampling spacing.

    ``strength`` is a persistent radar reflectivity in [0, 1) and
    ``ground_draw`` a persistent uniform draw deciding whether a ground
    point returns at all; both are fixed per point so that consecutive
    sweeps see the same scatterers.
    """

    points: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    semantic: np.ndarray
    spacing: np.ndarray
    primitive: np.ndarray  # index of the source primitive
    strength: np.ndarray
    ground_draw: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @property
    def ground_mask(self) -> np.ndarray:
        return self.semantic == GROUND


def _grid(n_u: int, n_v: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Stratified samples in [0, 1)^2: one jittered point per cell."""
    iu, iv = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="ij")
    ju, jv = rng.uniform(size=(2, n_u, n_v))
    return ((iu + ju) / n_u).ravel(), ((iv + jv) / n_v).ravel()


def _rect(a: float, b: float, density: float, rng):
    """Stratified (u, v) samples over an a x b rectangle, about a*b*density of them."""
    n_u = max(1, int(round(a * math.sqrt(density))))
    n_v = max(1, int(round(b * math.sqrt(density))))
    u, v = _grid(n_u, n_v, rng)
    return u * a, v * b


def _sample_local(p: Primitive, rng):
    """Points and normals in the primitive's local frame."""
    rho = p.density
    if p.kind == "ground":
        lx, ly = p.dims
        u, v = _rect(lx, ly, rho, rng)
        pts = np.column_stack([u - lx / 2, v - ly / 2, np.zeros_like(u)])
        nrm = np.tile([0.0, 0.0, 1.0], (len(u), 1))
        return pts, nrm
    if p.kind in ("box", "wall"):
        lx, ly, h = p.dims
        faces = []
        for axis, sign in ((0, 1), (0, -1), (1, 1), (1, -1)):
            width = ly if axis == 0 else lx
            u, v = _rect(width, h, rho, rng)
            pts = np.zeros((len(u), 3))
            pts[:, axis] = sign * (lx if axis == 0 else ly) / 2
            pts[:, 1 - axis] = u - width / 2
            pts[:, 2] = v
            n = np.zeros(3)
            n[axis] = sign
            faces.append((pts, np.tile(n, (len(u), 1))))
        u, v = _rect(lx, ly, rho, rng)
        faces.append((np.column_stack([u - lx / 2, v - ly / 2, np.full_like(u, h)]), np.tile([0.0, 0.0, 1.0], (len(u), 1))))
        return np.concatenate([f[0] for f in faces]), np.concatenate([f[1] for f in faces])
    r, h = p.dims
    u, v = _rect(2 * math.pi * r, h, rho, rng)
    phi = u / r
    side = np.column_stack([r * np.cos(phi), r * np.sin(phi), v])
    side_n = np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)])
    # top cap: stratified in (r^2, angle) so samples are uniform over the disc
    n_cap = max(1, int(round(math.pi * r * r * rho)))
    n_a = max(1, int(round(math.sqrt(n_cap))))
    n_b = max(1, int(round(n_cap / n_a)))
    a, b = _grid(n_a, n_b, rng)
    rr = r * np.sqrt(a)
    top = np.column_stack([rr * np.cos(2 * math.pi * b), rr * np.sin(2 * math.pi * b), np.full_like(a, h)])
    return np.concatenate([side, top]), np.concatenate([side_n, np.tile([0.0, 0.0, 1.0], (len(top), 1))])


def _checker(points: np.ndarray, cell: float = 1.0) -> np.ndarray:
    k = np.floor(points / cell).astype(np.int64).sum(1)
    return np.where(k % 2 == 0, 1.0, -1.0)


def build_scene(spec: SceneSpec) -> Scene:
    """Deterministic stratified surface sampling of every primitive."""
    rng = np.random.default_rng(spec.seed)
    parts = []
    for i, prim in enumerate(spec.primitives):
        pts, nrm = _sample_local(prim, rng)
        pose = prim.pose
        world = pose.apply(pts)
        normals = nrm @ pose.rotation.T
        alb = np.clip(np.asarray(prim.albedo, float) * (1.0 + prim.texture * _checker(world))[:, None], 0.0, 1.0)
        sem = np.full(len(pts), GROUND if prim.kind == "ground" else STRUCTURE)
        parts.append((world, normals, alb, sem, np.full(len(pts), 1.0 / math.sqrt(prim.density)), np.full(len(pts), i)))
    if not parts:
        z = np.zeros((0, 3))
        return Scene(z, z, z, np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
    cols = [np.concatenate([p[j] for p in parts]) for j in range(6)]
    n = len(cols[0])
    return Scene(*cols, rng.uniform(size=n), rng.uniform(size=n))


def default_scene_spec(seed: int = 0) -> SceneSpec:
    """40 x 40 m ground with 6 boxes, 2 walls and 3 cylinders around a circular drive."""
    prims = [
        Primitive("ground", (40.0, 40.0), albedo=(0.42, 0.40, 0.36), density=16.0, texture=0.2),
        Primitive("box", (3.0, 2.0, 2.5), (17.0, -9.0, 0.0), 20.0, (0.75, 0.30, 0.25), 16.0),
        Primitive("box", (2.5, 2.5, 3.0), (9.0, -3.0, 0.0), -10.0, (0.25, 0.45, 0.75), 16.0),
        Primitive("box", (4.0, 2.0, 2.0), (17.5, 8.0, 0.0), 75.0, (0.80, 0.70, 0.20), 16.0),
        Primitive("box", (2.0, 3.0, 3.5), (5.0, 7.0, 0.0), 40.0, (0.35, 0.70, 0.35), 16.0),
        Primitive("box", (3.0, 3.0, 2.0), (-6.0, 17.0, 0.0), 0.0, (0.65, 0.35, 0.70), 16.0),
        Primitive("box", (2.0, 2.0, 4.0), (-17.0, 5.0, 0.0), 30.0, (0.70, 0.55, 0.45), 16.0),
        Primitive("wall", (14.0, 0.4, 4.0), (8.0, -19.0, 0.0), 0.0, (0.60, 0.60, 0.62), 16.0),
        Primitive("wall", (14.0, 0.4, 3.5), (19.0, 0.0, 0.0), 90.0, (0.55, 0.50, 0.48), 16.0),
        Primitive("cylinder", (0.4, 5.0), (-4.0, -8.0, 0.0), 0.0, (0.40, 0.28, 0.18), 16.0),
        Primitive("cylinder", (0.5, 6.0), (12.0, 13.0, 0.0), 0.0, (0.40, 0.30, 0.20), 16.0),
        Primitive("cylinder", (0.4, 5.0), (0.0, 2.0, 0.0), 0.0, (0.35, 0.26, 0.16), 16.0),
    ]
    return SceneSpec(tuple(prims), seed)


# ------------------------------------------------------------------ trajectory


@dataclass(frozen=True)
class TrajectorySpec:
    """Sensor path through planar ``waypoints`` (x, y) at ``height``, sampled at ``rate`` Hz.

    ``speed`` is a scalar or one value per frame step (m/s); the straight-line
    distance between consecutive frames equals speed / rate.
    """

    waypoints: tuple
    speed: float | tuple = 8.0
    rate: float = 10.0
    frames: int = 50
    height: float = 1.0

    def step_lengths(self) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.speed, dtype=float), (self.frames - 1,))
        if np.any(s <= 0):
            raise ValueError("speeds must be positive")
        return s / self.rate


def default_trajectory_spec(frames: int = 50) -> TrajectorySpec:
    """Counter-clockwise arc of radius 14 m around the scene center starting at (0, -14)."""
    ang = np.radians(np.arange(-90.0, 121.0, 15.0))
    wps = tuple((float(14.0 * math.cos(a)), float(14.0 * math.sin(a))) for a in ang)
    return TrajectorySpec(wps, 8.0, 10.0, frames, 1.0)


def build_trajectory(spec: TrajectorySpec) -> Trajectory:
    """Sensor-to-world poses along a cubic spline through the waypoints, heading along the tangent."""
    wp = np.asarray(spec.waypoints, dtype=float).reshape(-1, 2)
    if len(wp) < 2:
        raise ValueError("need at least two waypoints")
    if spec.frames < 1:
        raise ValueError("need at least one frame")
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))])
    curve = CubicSpline(chord, wp, bc_type="natural")
    steps = spec.step_lengths() if spec.frames > 1 else np.zeros(0)
    params = [0.0]
    for step in steps:
        u0 = params[-1]
        p0 = curve(u0)
        f = lambda u: np.linalg.norm(curve(u) - p0) - step  # noqa: E731
        hi = u0 + step
        while f(hi) < 0:
            hi += step
            if hi > chord[-1] + 10 * step:
                raise ValueError("trajectory runs past the last waypoint; add waypoints or reduce speed")
        params.append(brentq(f, u0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200))
    params = np.array(params)
    xy = curve(params)
    d = curve(params, 1)
    yaw = np.arctan2(d[:, 1], d[:, 0])
    poses = [Se3Pose(from_euler(0.0, 0.0, a), [x, y, spec.height]) for (x, y), a in zip(xy, yaw)]
    return Trajectory(np.arange(spec.frames) / spec.rate, poses)


def ego_velocities(traj: Trajectory) -> np.ndarray:
    """Sensor-frame velocity per frame from forward differences (last frame repeats)."""
    n = len(traj)
    v = np.zeros((n, 3))
    for k in range(n - 1):
        dt = traj.timestamps[k + 1] - traj.timestamps[k]
        v[k] = traj[k].rotation.T @ (traj[k + 1].translation - traj[k].translation) / dt
    if n > 1:
        v[-1] = v[-2]
    return v


# ------------------------------------------------------------------ radar


@dataclass(frozen=True)
class RadarModel:
    fov_az: float = 120.0  # deg, full width
    fov_el: float = 30.0
    max_range: float = 50.0
    min_range: float = 0.5
    points_per_frame: int = 300
    sigma_range: float = 0.05
    sigma_azimuth: float = 0.3  # deg
    dropout: float = 0.0
    ground_return_scale: float = 0.2
    rcs_noise: float = 1.0
    flicker: float = 0.3  # per-sweep jitter of scatterer strength
    occlusion_bin_deg: float = 0.25
    occlusion_tolerance: float = 0.5

    def __post_init__(self):
        if self.flicker < 0:
            raise ValueError("flicker must be non-negative")
        if not (0 < self.fov_az <= 360 and 0 < self.fov_el <= 180):
            raise ValueError("field of view out of range")
        if not (0 <= self.dropout <= 1 and 0 <= self.ground_return_scale <= 1):
            raise ValueError("dropout and ground_return_scale must lie in [0, 1]")
        if self.max_range <= self.min_range or self.points_per_frame < 1:
            raise ValueError("invalid range limits or point budget")
        if self.sigma_range < 0 or self.sigma_azimuth < 0:
            raise ValueError("noise levels must be non-negative")


def to_spherical(p: np.ndarray):
    r = np.linalg.norm(p, axis=1)
    az = np.arctan2(p[:, 1], p[:, 0])
    el = np.arcsin(np.clip(p[:, 2] / np.maximum(r, 1e-300), -1.0, 1.0))
    return r, az, el


def from_spherical(r, az, el) -> np.ndarray:
    c = np.cos(el)
    return np.column_stack([r * c * np.cos(az), r * c * np.sin(az), r * np.sin(el)])


def apply_noise(p: np.ndarray, model: RadarModel, rng) -> np.ndarray:
    """Gaussian range and azimuth perturbation in sensor spherical coordinates."""
    if model.sigma_range == 0 and model.sigma_azimuth == 0:
        return p.copy()
    r, az, el = to_spherical(p)
    r = r + rng.normal(0.0, model.sigma_range, len(r))
    az = az + np.radians(rng.normal(0.0, model.sigma_azimuth, len(az)))
    return from_spherical(r, az, el)


def visible_indices(scene: Scene, sensor_pose: Se3Pose, model: RadarModel) -> np.ndarray:
    """Scene points inside the FOV cone and range, facing the sensor and not occluded."""
    p = sensor_pose.inverse().apply(scene.points)
    r, az, el = to_spherical(p)
    inside = ((r >= model.min_range) & (r <= model.max_range)
              & (np.abs(np.degrees(az)) <= model.fov_az / 2) & (np.abs(np.degrees(el)) <= model.fov_el / 2))
    # back-facing surfaces are invisible
    facing = (scene.normals * (sensor_pose.translation - scene.points)).sum(1) > 0
    idx = np.flatnonzero(inside & facing)
    if len(idx) == 0:
        return idx
    b = math.radians(model.occlusion_bin_deg)
    ia = np.floor(az[idx] / b).astype(np.int64)
    ie = np.floor(el[idx] / b).astype(np.int64)
    key = (ia - ia.min()) * (ie.max() - ie.min() + 1) + (ie - ie.min())
    _, inv = np.unique(key, return_inverse=True)
    front = np.full(inv.max() + 1, np.inf)
    np.minimum.at(front, inv, r[idx])
    return idx[r[idx] <= front[inv] + model.occlusion_tolerance]


def sample_radar(scene: Scene, sensor_pose: Se3Pose, ego_velocity, model: RadarModel = RadarModel(), rng=None,
                 timestamp: float = 0.0) -> RadarFrame:
    """One radar sweep in the sensor frame (x forward, y left, z up).

    Visible ground points return only where their persistent draw is below
    ``ground_return_scale``. When more points survive than the budget, the
    sweep keeps the strongest scatterers, strength jittered per sweep by
    ``flicker``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    idx = visible_indices(scene, sensor_pose, model)
    if len(idx):
        g = scene.semantic[idx] == GROUND
        keep = ~g | (scene.ground_draw[idx] < model.ground_return_scale)
        if model.dropout > 0:
            keep &= rng.uniform(size=len(idx)) >= model.dropout
        idx = idx[keep]
    if len(idx) == 0:
        raise EmptyFrame("no scene point is visible to the radar")
    if len(idx) > model.points_per_frame:
        score = scene.strength[idx] + rng.normal(0.0, model.flicker, len(idx))
        idx = np.sort(idx[np.argsort(-score, kind="stable")[:model.points_per_frame]])
    p_true = sensor_pose.inverse().apply(scene.points[idx])
    p = apply_noise(p_true, model, rng)
    v = np.asarray(ego_velocity, dtype=float)
    unit = p_true / np.linalg.norm(p_true, axis=1, keepdims=True)
    rrv = -(unit @ v)
    rcs = 10.0 * scene.albedo[idx].mean(1) + 5.0 * scene.strength[idx] + rng.normal(0.0, model.rcs_noise, len(idx))
    return RadarFrame(timestamp, p, rrv, rcs)


# ------------------------------------------------------------------ camera priors


@dataclass(frozen=True)
class CameraModel:
    width: int = 64
    height: int = 64
    fov_x_deg: float = 90.0

    def camera(self, body_to_world: Se3Pose) -> Camera:
        return Camera.from_body_pose(body_to_world, self.width, self.height, self.fov_x_deg)


def render_priors(scene: Scene, cam: Camera, splat_factor: float = 1.45) -> ViewPriors:
    """Z-buffered disc splatting of the reference cloud.

    Each point is a disc of radius ``splat_factor`` x its sampling spacing
    lying in its tangent plane; a pixel's depth is where its ray meets the
    nearest covering disc, so planar surfaces get exact depth. With
    stratified sampling every surface location lies within sqrt(2) spacings
    of a sample, so the default factor leaves no holes.
    """
    H, W = cam.height, cam.width
    image = np.tile(SKY_COLOR, (H, W, 1))
    depth = np.zeros((H, W))
    normal = np.zeros((H, W, 3))
    sky = np.ones((H, W), dtype=bool)
    if len(scene) == 0:
        return ViewPriors(image, depth, normal, sky)
    Rw = cam.world_to_camera.rotation
    pc = scene.points @ Rw.T + cam.world_to_camera.translation
    nc = scene.normals @ Rw.T
    front = pc[:, 2] > 0.05
    idx = np.flatnonzero(front)
    pc, nc = pc[idx], nc[idx]
    rad = splat_factor * scene.spacing[idx]
    u = cam.fx * pc[:, 0] / pc[:, 2] + cam.cx
    v = cam.fy * pc[:, 1] / pc[:, 2] + cam.cy
    # conservative pixel radius of the disc
    pr = (max(cam.fx, cam.fy) * rad / np.maximum(pc[:, 2] - rad, 0.05 * pc[:, 2])) + 1.0
    c0 = np.maximum(np.ceil(u - pr - 0.5), 0).astype(np.int64)
    c1 = np.minimum(np.floor(u + pr - 0.5), W - 1).astype(np.int64)
    r0 = np.maximum(np.ceil(v - pr - 0.5), 0).astype(np.int64)
    r1 = np.minimum(np.floor(v + pr - 0.5), H - 1).astype(np.int64)
    ok = (c1 >= c0) & (r1 >= r0)
    sel = np.flatnonzero(ok)
    nc_ = (c1 - c0 + 1)[sel]
    sizes = nc_ * (r1 - r0 + 1)[sel]
    if sizes.sum() == 0:
        return ViewPriors(image, depth, normal, sky)
    slot = np.repeat(np.arange(len(sel)), sizes)
    local = np.arange(sizes.sum()) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    j = sel[slot]
    rows = r0[j] + local // nc_[slot]
    cols = c0[j] + local % nc_[slot]
    ray = np.column_stack([(cols + 0.5 - cam.cx) / cam.fx, (rows + 0.5 - cam.cy) / cam.fy, np.ones(len(rows))])
    n_j = nc[j]
    denom = (n_j * ray).sum(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (n_j * pc[j]).sum(1) / denom
    hit_pt = ray * t[:, None]
    good = (np.abs(denom) > 1e-9) & (t > 0.05) & (np.linalg.norm(hit_pt - pc[j], axis=1) <= rad[j])
    j, rows, cols, t = j[good], rows[good], cols[good], t[good]
    if len(j) == 0:
        return ViewPriors(image, depth, normal, sky)
    pix = rows * W + cols
    order = np.lexsort((j, t, pix))
    pix, j, t = pix[order], j[order], t[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, j, t = pix[first], j[first], t[first]
    gi = idx[j]
    n_w = scene.normals[gi]
    to_cam = cam.center - scene.points[gi]
    n_w = np.where(((n_w * to_cam).sum(1) < 0)[:, None], -n_w, n_w)
    shade = AMBIENT + (1 - AMBIENT) * np.maximum(n_w @ LIGHT_DIR, 0.0)
    flat_img = image.reshape(-1, 3)
    flat_img[pix] = np.clip(scene.albedo[gi] * shade[:, None], 0.0, 1.0)
    depth.reshape(-1)[pix] = t
    normal.reshape(-1, 3)[pix] = n_w
    sky.reshape(-1)[pix] = False
    return ViewPriors(image, depth, normal, sky)


# ------------------------------------------------------------------ datasets


@dataclass
class Sequence:
    scene: Scene
    trajectory: Trajectory
    frames: list
    keyframes: list = field(default_factory=list)
    priors: dict = field(default_factory=dict)  # keyframe index -> ViewPriors
    cameras: dict = field(default_factory=dict)  # keyframe index -> Camera


def simulate(scene_spec: SceneSpec, traj_spec: TrajectorySpec, model: RadarModel = RadarModel(),
             cam_model: CameraModel | None = CameraModel(), keyframe_stride: int = 5, seed: int | None = None,
             scene: Scene | None = None) -> Sequence:
    """In-memory sequence: radar frames for every pose and priors for every keyframe."""
    seed = scene_spec.seed if seed is None else seed
    scene = build_scene(scene_spec) if scene is None else scene
    traj = build_trajectory(traj_spec)
    vel = ego_velocities(traj)
    frames = []
    for k, pose in enumerate(traj.poses):
        rng = np.random.default_rng([seed, k])
        frames.append(sample_radar(scene, pose, vel[k], model, rng, float(traj.timestamps[k])))
    seq = Sequence(scene, traj, frames)
    if cam_model is not None:
        seq.keyframes = list(range(0, len(traj), keyframe_stride))
        for k in seq.keyframes:
            cam = cam_model.camera(traj[k])
            seq.cameras[k] = cam
            seq.priors[k] = render_priors(scene, cam)
    return seq


def write_camera_toml(path, cam_model: CameraModel, keyframe_stride: int) -> None:
    import tomli_w

    cam = cam_model.camera(Se3Pose.identity())
    doc = {
        "width": cam.width, "height": cam.height, "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "fov_x_deg": cam_model.fov_x_deg, "keyframe_stride": keyframe_stride,
        "body_to_camera": {"rotation": BODY_TO_OPTICAL.rotation.tolist(),
                           "translation": BODY_TO_OPTICAL.translation.tolist()},
    }
    Path(path).write_bytes(tomli_w.dumps(doc).encode())


def generate_sequence(scene_spec: SceneSpec, traj_spec: TrajectorySpec, model: RadarModel, cam_model: CameraModel,
                      out_dir, keyframe_stride: int = 5, seed: int | None = None) -> Sequence:
    """Write a dataset directory (frames, ground truth, priors, camera) and return it in memory."""
    seq = simulate(scene_spec, traj_spec, model, cam_model, keyframe_stride, seed)
    out = Path(out_dir)
    for sub in ("frames", "gt", "priors"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(seq.frames):
        write_frame_ply(out / "frames" / f"{k:06d}.ply", f)
    write_kitti(out / "gt" / "poses.kitti", seq.trajectory, out / "gt" / "times.txt")
    write_points_ply(out / "gt" / "reference.ply", seq.scene.points, seq.scene.albedo)
    for k in seq.keyframes:
        p = seq.priors[k]
        write_ppm(out / "priors" / f"{k:06d}.ppm", p.image)
        write_pfm(out / "priors" / f"{k:06d}.pfm", p.depth_prior)
        write_pfm(out / "priors" / f"{k:06d}.normal.pfm", p.normal_prior)
        write_pgm_mask(out / "priors" / f"{k:06d}.sky.pgm", p.sky2d)
    write_camera_toml(out / "camera.toml", cam_model, keyframe_stride)
    log.info("simulate frames=%d keyframes=%d out=%s", len(seq.frames), len(seq.keyframes), out)
    return seq


@dataclass
class Dataset:
    """A dataset directory read back: frames, ground truth, keyframe priors and the camera model."""

    frames: list
    gt: Trajectory | None
    keyframes: list
    priors: dict  # keyframe index -> ViewPriors
    cam_model: CameraModel | None
    reference: Path | None


def load_dataset(path) -> Dataset:
    """Read the directory layout written by :func:`generate_sequence`; missing parts come back empty."""
    root = Path(path)
    files = sorted((root / "frames").glob("*.ply"))
    if not files:
        raise FileNotFoundError(f"{root / 'frames'}: no PLY frames")
    gt = None
    if (root / "gt" / "poses.kitti").exists():
        gt = read_kitti(root / "gt" / "poses.kitti", root / "gt" / "times.txt")
    frames = [read_frame_ply(f, None if gt is None or k >= len(gt) else float(gt.timestamps[k]))
              for k, f in enumerate(files)]
    cam_model = None
    if (root / "camera.toml").exists():
        doc = tomllib.loads((root / "camera.toml").read_text())
        cam_model = CameraModel(int(doc["width"]), int(doc["height"]), float(doc["fov_x_deg"]))
    priors = {}
    for img in sorted((root / "priors").glob("*.ppm")):
        k = int(img.stem)
        base = root / "priors" / img.stem
        priors[k] = ViewPriors(read_ppm(img), read_pfm(f"{base}.pfm"), read_pfm(f"{base}.normal.pfm"),
                               read_pgm_mask(f"{base}.sky.pgm"))
    ref = root / "gt" / "reference.ply"
    return Dataset(frames, gt, sorted(priors), priors, cam_model, ref if ref.exists() else None)
