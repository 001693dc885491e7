"""File formats: PLY point clouds, KITTI trajectories, PPM/PGM/PFM images."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

from .core import RadarFrame, Se3Pose, Trajectory

_TS_COMMENT = re.compile(r"^timestamp\s+(\S+)$")


# --------------------------------------------------------------------- PLY


def write_frame_ply(path, frame: RadarFrame, binary: bool = True) -> None:
    """Radar frame as PLY with float32 x, y, z, rrv, rcs."""
    data = np.empty(
        len(frame),
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("rrv", "<f4"), ("rcs", "<f4")],
    )
    data["x"], data["y"], data["z"] = frame.positions.T
    data["rrv"] = frame.rrv
    data["rcs"] = frame.rcs
    el = PlyElement.describe(data, "vertex")
    PlyData([el], text=not binary, byte_order="<", comments=[f"timestamp {frame.timestamp!r}"]).write(str(path))


def _read_vertex(path) -> tuple[np.ndarray, list[str]]:
    ply = PlyData.read(str(path))
    return ply["vertex"].data, list(ply.comments)


def read_frame_ply(path, timestamp: float | None = None) -> RadarFrame:
    """Read x, y, z and (optionally) rrv, rcs; other properties are ignored."""
    v, comments = _read_vertex(path)
    names = v.dtype.names
    pos = np.column_stack([v["x"], v["y"], v["z"]]).astype(float)
    rrv = np.asarray(v["rrv"], dtype=float) if "rrv" in names else None
    rcs = np.asarray(v["rcs"], dtype=float) if "rcs" in names else None
    if timestamp is None:
        timestamp = 0.0
        for c in comments:
            m = _TS_COMMENT.match(c.strip())
            if m:
                timestamp = float(m.group(1))
    return RadarFrame(timestamp, pos, rrv, rcs)


def write_points_ply(path, points: np.ndarray, colors: np.ndarray | None = None, binary: bool = True) -> None:
    """Colored cloud: float32 x, y, z plus uchar red, green, blue (colors in [0, 1])."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    data = np.empty(len(points), dtype=fields)
    data["x"], data["y"], data["z"] = points.T
    if colors is not None:
        rgb = np.clip(np.round(np.asarray(colors, dtype=float) * 255.0), 0, 255).astype(np.uint8)
        data["red"], data["green"], data["blue"] = rgb.T
    PlyData([PlyElement.describe(data, "vertex")], text=not binary, byte_order="<").write(str(path))


def read_points_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    v, _ = _read_vertex(path)
    names = v.dtype.names
    pts = np.column_stack([v["x"], v["y"], v["z"]]).astype(float)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        rgb = np.column_stack([v["red"], v["green"], v["blue"]]).astype(float)
        colors = rgb / 255.0 if v["red"].dtype.kind in "ui" else rgb
    return pts, colors


# -------------------------------------------------------------------- KITTI


def write_kitti(path, traj: Trajectory, times_path=None) -> None:
    rows = np.array([p.matrix[:3, :].reshape(-1) for p in traj.poses]).reshape(-1, 12)
    np.savetxt(path, rows, fmt="%.12e")
    if times_path is not None:
        np.savetxt(times_path, traj.timestamps, fmt="%.9f")


def read_kitti(path, times_path=None) -> Trajectory:
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 12:
        raise ValueError(f"{path}: expected 12 columns, got {rows.shape[1]}")
    poses = []
    for r in rows:
        T = np.eye(4)
        T[:3, :] = r.reshape(3, 4)
        poses.append(Se3Pose.from_matrix(T))
    if times_path is not None and Path(times_path).exists():
        ts = np.loadtxt(times_path, ndmin=1)
    else:
        ts = np.arange(len(poses), dtype=float)
    return Trajectory(ts, poses)


# ------------------------------------------------------------------- images


def write_ppm(path, image: np.ndarray) -> None:
    """H x W x 3 float image in [0, 1] as binary P6."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(str(path), format="PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def write_pgm_mask(path, mask: np.ndarray) -> None:
    """Boolean mask as P5, 0 = false, 255 = true."""
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(str(path), format="PPM")


def read_pgm_mask(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im.convert("L")) >= 128


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM; H x W ("Pf") or H x W x 3 ("PF"). Rows stored bottom-up."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports HxW or HxWx3, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if tag == b"PF" else 1
        arr = np.frombuffer(f.read(w * h * ch * 4), dtype=dtype)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return arr.reshape(shape)[::-1].astype(float)
