"""World radar maps built from a trajectory, optionally painted from camera priors."""

from __future__ import annotations

import numpy as np

from .core import Camera, RadarFrame, Trajectory

GRAY = 0.5


def map_build(frames, trajectory: Trajectory, priors=None):
    """Concatenate frames in the world frame and color them.

    ``priors`` maps frame index -> (Camera, ViewPriors). Each point takes the
    color of the pixel it projects to in the camera nearest in time; points
    that fall outside that image (or behind it) stay gray.
    Returns (points (N, 3), colors (N, 3), frame index per point).
    """
    frames = list(frames)
    if len(frames) > len(trajectory):
        raise ValueError(f"trajectory has {len(trajectory)} poses for {len(frames)} frames")
    pts = [trajectory[k].apply(f.positions) for k, f in enumerate(frames)]
    owner = np.concatenate([np.full(len(f), k) for k, f in enumerate(frames)]) if frames else np.zeros(0, int)
    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    colors = np.full((len(points), 3), GRAY)
    if priors:
        keys = np.array(sorted(priors))
        key_times = trajectory.timestamps[keys]
        for k in range(len(frames)):
            sel = np.flatnonzero(owner == k)
            if len(sel) == 0:
                continue
            kf = keys[np.argmin(np.abs(key_times - trajectory.timestamps[k]))]
            cam, pri = priors[kf]
            colors[sel] = sample_colors(cam, pri.image, points[sel], colors[sel])
    return points, colors, owner


def sample_colors(cam: Camera, image: np.ndarray, points: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    uv, z = cam.project(points)
    out = fallback.copy()
    with np.errstate(invalid="ignore"):
        c = np.floor(uv[:, 0])
        r = np.floor(uv[:, 1])
    ok = (z > 0.01) & (c >= 0) & (c < cam.width) & (r >= 0) & (r < cam.height)
    out[ok] = image[r[ok].astype(int), c[ok].astype(int)]
    return out


def voxel_downsample(points: np.ndarray, colors: np.ndarray | None, voxel: float):
    """Average points (and colors) falling in the same cubic voxel; output sorted by voxel key."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if voxel <= 0 or len(points) == 0:
        return points.copy(), None if colors is None else np.asarray(colors, float).copy()
    keys = np.floor(points / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    out = np.zeros((len(counts), 3))
    np.add.at(out, inv, points)
    out /= counts[:, None]
    if colors is None:
        return out, None
    col = np.zeros((len(counts), 3))
    np.add.at(col, inv, np.asarray(colors, dtype=float))
    return out, col / counts[:, None]


def frames_in_world(frames, trajectory: Trajectory) -> list[RadarFrame]:
    return [f.with_positions(trajectory[k].apply(f.positions)) for k, f in enumerate(frames)]
