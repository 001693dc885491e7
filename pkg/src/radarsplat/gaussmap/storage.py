"""Binary map checkpoints and point export."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import GaussianMap

MAGIC = b"GMAP"
FORMAT_VERSION = 1
EXPORT_OPACITY = 0.1

_RECORD = np.dtype([("params", "<f4", (14,)), ("sky", "u1")])


def export_points(gmap: GaussianMap, opacity_threshold: float = EXPORT_OPACITY) -> tuple[np.ndarray, np.ndarray]:
    """(positions, colors) of non-sky gaussians with opacity above the threshold."""
    keep = ~gmap.sky & (gmap.opacity > opacity_threshold)
    return gmap.mu[keep].copy(), gmap.color[keep].copy()


def save_map(path, gmap: GaussianMap) -> None:
    rec = np.zeros(len(gmap), dtype=_RECORD)
    rec["params"] = np.column_stack([gmap.mu, gmap.opacity_logit, gmap.log_scale, gmap.quat, gmap.color])
    rec["sky"] = gmap.sky
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(gmap)))
        f.write(rec.tobytes())


def load_map(path) -> GaussianMap:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a gaussian map checkpoint")
    version, n = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    rec = np.frombuffer(data, dtype=_RECORD, count=n, offset=16)
    p = rec["params"].astype(float)
    return GaussianMap(p[:, 0:3], p[:, 3], p[:, 4:7], p[:, 7:11], p[:, 11:14], rec["sky"].astype(bool),
                       np.arange(n, dtype=np.int64))
