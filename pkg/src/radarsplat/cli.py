"""Command-line entry point: ``radarsplat <subcommand> ...``.

Settings resolve as flag > config file > default. Logs go to stderr as
key=value lines; results go to stdout (and optional CSV files).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import STAGES, PipelineConfig, load_config, tomllib
from .core import Camera, Se3Pose
from .errors import RadarSplatError
from .gaussmap import FORMAT_VERSION, ViewPriors, export_points, init_from_points, load_map, render, save_map
from .gaussmap.optimize import optimize_with_stats

log = logging.getLogger("radarsplat")


class KeyValueFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return f"level={record.levelname.lower()} src={record.name} {record.getMessage()}"


def setup_logging(quiet: bool, verbose: bool) -> None:
    level = logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root = logging.getLogger("radarsplat")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def set_threads(n: int) -> None:
    """Limit BLAS/OpenMP pools (the compiled raster kernels are serial); 1 gives bit-reproducible runs."""
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=max(1, n))


def _print_kv(values: dict, out=None) -> None:
    out = out or sys.stdout
    for k, v in values.items():
        out.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")


def _write_csv(path, values: dict) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(values))
        w.writerow([repr(v) if isinstance(v, float) else v for v in values.values()])


# ------------------------------------------------------------------ file helpers


def read_frames(path):
    """Radar frames from a directory of PLY files, or from a dataset directory with frames/."""
    from .io import read_frame_ply

    root = Path(path)
    if (root / "frames").is_dir():
        root = root / "frames"
    files = sorted(root.glob("*.ply"))
    if not files:
        raise FileNotFoundError(f"{root}: no PLY frames")
    return [read_frame_ply(f) for f in files]


def pose_from_list(values) -> Se3Pose:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size != 12:
        raise ValueError(f"pose needs 12 numbers (3x4 row-major), got {v.size}")
    T = np.eye(4)
    T[:3, :] = v.reshape(3, 4)
    return Se3Pose.from_matrix(T)


def camera_from_toml(path, body_to_world: Se3Pose | None = None) -> Camera:
    """Intrinsics (fx, fy, cx, cy, width, height, or fov_x_deg) and the body pose from a TOML file.

    The pose is ``body_to_world`` (12 numbers) inside the file unless given;
    the camera looks along the body x axis.
    """
    doc = tomllib.loads(Path(path).read_text())
    if body_to_world is None:
        if "body_to_world" not in doc:
            raise ValueError(f"{path}: no body_to_world pose (pass --pose-kitti/--index)")
        body_to_world = pose_from_list(doc["body_to_world"])
    w, h = int(doc["width"]), int(doc["height"])
    cam = Camera.from_body_pose(body_to_world, w, h, float(doc.get("fov_x_deg", 90.0)))
    if "fx" in doc:
        cam = Camera(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]), w, h,
                     cam.world_to_camera)
    return cam


def load_views(path):
    """(Camera, ViewPriors) list from a views TOML: [camera] table and [[view]] entries with file paths."""
    from .io import read_pfm, read_pgm_mask, read_ppm

    path = Path(path)
    doc = tomllib.loads(path.read_text())
    base = path.parent
    cam_doc = doc["camera"]
    views = []
    for v in doc.get("view", []):
        pose = pose_from_list(v["body_to_world"])
        w, h = int(cam_doc["width"]), int(cam_doc["height"])
        cam = Camera.from_body_pose(pose, w, h, float(cam_doc.get("fov_x_deg", 90.0)))
        pri = ViewPriors(read_ppm(base / v["image"]), read_pfm(base / v["depth"]), read_pfm(base / v["normal"]),
                         read_pgm_mask(base / v["sky"]))
        views.append((cam, pri))
    if not views:
        raise ValueError(f"{path}: no [[view]] entries")
    return views


def write_views(path, cam_doc: dict, entries: list) -> None:
    """Write a views TOML; ``entries`` are (body_to_world Se3Pose, {image, depth, normal, sky} paths)."""
    import tomli_w

    doc = {"camera": cam_doc, "view": []}
    for pose, files in entries:
        doc["view"].append({"body_to_world": pose.matrix[:3, :].reshape(-1).tolist(), **{k: str(v) for k, v in files.items()}})
    Path(path).write_text(tomli_w.dumps(doc))


def _prior_files(dataset: Path, k: int) -> dict:
    p = dataset / "priors"
    return {"image": p / f"{k:06d}.ppm", "depth": p / f"{k:06d}.pfm", "normal": p / f"{k:06d}.normal.pfm",
            "sky": p / f"{k:06d}.sky.pgm"}


# ------------------------------------------------------------------ subcommands


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    from . import sim

    scene_spec = load_scene_spec(args.scene, cfg.general.seed) if args.scene else sim.default_scene_spec(cfg.general.seed)
    if args.traj:
        traj_spec = load_traj_spec(args.traj)
    else:
        base = sim.default_trajectory_spec(cfg.sim.frames)
        traj_spec = sim.TrajectorySpec(base.waypoints, cfg.sim.speed, cfg.sim.rate, cfg.sim.frames, cfg.sim.height)
    seq = sim.generate_sequence(scene_spec, traj_spec, cfg.radar, cfg.camera, args.out, cfg.sim.keyframe_stride,
                                cfg.general.seed)
    _print_kv({"frames": len(seq.frames), "keyframes": len(seq.keyframes), "out": args.out})
    return 0


def load_scene_spec(path, seed: int):
    from .sim import Primitive, SceneSpec

    doc = tomllib.loads(Path(path).read_text())
    prims = []
    for p in doc.get("primitive", []):
        unknown = set(p) - {"kind", "dims", "position", "yaw_deg", "albedo", "density", "texture"}
        if unknown:
            raise ValueError(f"{path}: unknown primitive key(s) {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in p.items()}
        prims.append(Primitive(**kw))
    if not prims:
        raise ValueError(f"{path}: no [[primitive]] entries")
    return SceneSpec(tuple(prims), int(doc.get("seed", seed)))


def load_traj_spec(path):
    from .sim import TrajectorySpec

    doc = tomllib.loads(Path(path).read_text())
    speed = doc.get("speed", 8.0)
    return TrajectorySpec(tuple(tuple(w) for w in doc["waypoints"]), tuple(speed) if isinstance(speed, list) else speed,
                          float(doc.get("rate", 10.0)), int(doc.get("frames", 50)), float(doc.get("height", 1.0)))


def cmd_odom(args, cfg: PipelineConfig) -> int:
    from .io import write_kitti
    from .odometry import run_odometry
    from .pipeline import write_diagnostics

    frames = read_frames(args.input)
    res = run_odometry(frames, cfg.odometry_config())
    write_kitti(args.out, res.trajectory, args.times)
    if args.diag:
        write_diagnostics(args.diag, res.diagnostics)
    _print_kv({"frames": len(frames), "refined": sum(e.refined for e in res.estimates), "out": args.out})
    return 0


def cmd_score(args, cfg: PipelineConfig) -> int:
    from .io import read_frame_ply, read_kitti
    from .odometry import prepare, score_pair

    oc = cfg.odometry_config()
    src, tgt = prepare(read_frame_ply(args.src), oc), prepare(read_frame_ply(args.tgt), oc)
    if args.pose_kitti:
        pose = read_kitti(args.pose_kitti)[args.index]
    elif args.pose:
        x, y, z, roll, pitch, yaw = args.pose
        pose = Se3Pose.from_euler(math.radians(roll), math.radians(pitch), math.radians(yaw), (x, y, z))
    else:
        pose = Se3Pose.identity()
    history = read_kitti(args.history).poses if args.history else ()
    _print_kv(score_pair(src, tgt, pose, oc, history))
    return 0


def cmd_map_build(args, cfg: PipelineConfig) -> int:
    from .io import read_kitti, write_points_ply
    from .mapping import map_build, voxel_downsample
    from .sim import load_dataset

    traj = read_kitti(args.traj, args.times)
    frames = read_frames(args.frames)
    priors = None
    if args.dataset:
        data = load_dataset(args.dataset)
        if data.cam_model is None:
            raise FileNotFoundError(f"{args.dataset}: no camera.toml")
        keys = [k for k in data.keyframes if k < len(traj)]
        if cfg.mapping.views > 0:
            keys = keys[: cfg.mapping.views]
        priors = {k: (data.cam_model.camera(traj[k]), data.priors[k]) for k in keys}
        if args.views_out:
            cm = data.cam_model
            write_views(args.views_out, {"width": cm.width, "height": cm.height, "fov_x_deg": cm.fov_x_deg},
                        [(traj[k], {n: p.resolve() for n, p in _prior_files(Path(args.dataset), k).items()})
                         for k in keys])
        if keys and not args.all_frames:
            frames = frames[: keys[-1] + 1]
    pts, cols, _ = map_build(frames, traj, priors)
    pts, cols = voxel_downsample(pts, cols, cfg.mapping.voxel)
    write_points_ply(args.out, pts, cols)
    _print_kv({"points": len(pts), "out": args.out})
    return 0


def cmd_gs_optimize(args, cfg: PipelineConfig) -> int:
    from .io import read_points_ply

    pts, cols = read_points_ply(args.map)
    views = load_views(args.views)
    g0 = init_from_points(pts, cols)
    g1, stats = optimize_with_stats(g0, views, cfg.gaussmap)
    save_map(args.out, g1)
    _print_kv({"count_before": len(g0), "count_after": len(g1), "ground_added": stats.ground_added,
               "sky_flagged": int(g1.sky.sum()), "nan_grads": stats.nan_grads,
               "loss_last": stats.losses[-1] if stats.losses else float("nan"), "out": args.out})
    return 0


def cmd_render(args, cfg: PipelineConfig) -> int:
    from .io import read_kitti, write_pfm, write_ppm

    body = read_kitti(args.pose_kitti)[args.index] if args.pose_kitti else None
    cam = camera_from_toml(args.camera, body)
    buf = render(load_map(args.map), cam)
    write_ppm(args.out, buf.color)
    if args.depth_out:
        write_pfm(args.depth_out, buf.depth)
    _print_kv({"width": cam.width, "height": cam.height, "out": args.out})
    return 0


def cmd_export(args, cfg: PipelineConfig) -> int:
    from .io import write_points_ply

    pts, cols = export_points(load_map(args.map), cfg.metrics.export_opacity)
    write_points_ply(args.out, pts, cols)
    _print_kv({"points": len(pts), "out": args.out})
    return 0


def cmd_eval_odom(args, cfg: PipelineConfig) -> int:
    from .errors import TooShort
    from .io import read_kitti
    from .metrics import associate, ate, rpe_framewise, rpe_kitti

    est, gt = associate(read_kitti(args.est, args.est_times), read_kitti(args.gt, args.gt_times),
                        cfg.metrics.max_skew, args.interp)
    out = {"pairs": len(est)}
    if args.mode in ("kitti", "all"):
        try:
            out["t_rel"], out["r_rel"] = rpe_kitti(est, gt, cfg.metrics.rpe_lengths)
        except TooShort as exc:
            log.warning("metric=rpe_kitti error=%s", exc)
            out["t_rel"] = out["r_rel"] = float("nan")
    if args.mode in ("framewise", "all"):
        out["rpe_trans"], out["rpe_rot"] = rpe_framewise(est, gt)
    out["ate"] = ate(est, gt, align=not args.no_align)
    _print_kv(out)
    if args.csv:
        _write_csv(args.csv, out)
    return 0


def cmd_eval_map(args, cfg: PipelineConfig) -> int:
    from .io import read_points_ply, read_ppm
    from .metrics import map_report

    est, _ = read_points_ply(args.est)
    gt, _ = read_points_ply(args.gt)
    image = read_ppm(args.image) if args.image else None
    reference = read_ppm(args.reference) if args.reference else None
    rep = map_report(est, gt, cfg.metrics.fscore_thr, image, reference)
    out = rep.as_dict()
    _print_kv(out)
    if args.csv:
        _write_csv(args.csv, out)
    return 0


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    from .pipeline import run_pipeline

    summary = run_pipeline(cfg)
    sys.stdout.write(summary.text())
    return 0 if summary.ok else 1


# ------------------------------------------------------------------ parser


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    # options are accepted before and after the subcommand; the subcommand copies do not reset defaults
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="TOML config file", **kw)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value", **kw)
    p.add_argument("--seed", type=int, help="general.seed", **kw)
    p.add_argument("--threads", type=int, help="general.threads (1 = bit-reproducible)", **kw)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--quiet", action="store_true", **kw)
    g.add_argument("--verbose", action="store_true", **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarsplat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"radarsplat {__version__} map-format {FORMAT_VERSION}")
    _add_common(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic radar/camera dataset")
    s.add_argument("--scene", help="scene TOML ([[primitive]] tables); default scene if omitted")
    s.add_argument("--traj", help="trajectory TOML (waypoints, speed, rate, frames, height)")
    s.add_argument("--frames", dest="sim_frames", type=int, help="sim.frames")
    s.add_argument("--keyframe-stride", type=int, help="sim.keyframe_stride")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("odom", parents=[common], help="estimate a trajectory from radar frames")
    s.add_argument("--input", required=True, help="directory of PLY frames (or a dataset directory)")
    s.add_argument("--out", required=True, help="KITTI pose file")
    s.add_argument("--times", help="also write frame timestamps here")
    s.add_argument("--diag", help="per-pair diagnostics CSV")
    s.set_defaults(func=cmd_odom)

    s = sub.add_parser("score", parents=[common], help="six supervision terms for a frame pair and pose")
    s.add_argument("--src", required=True)
    s.add_argument("--tgt", required=True)
    s.add_argument("--pose", type=float, nargs=6, metavar=("X", "Y", "Z", "ROLL", "PITCH", "YAW"),
                   help="source-to-target pose, angles in degrees")
    s.add_argument("--pose-kitti", help="read the pose from a KITTI file instead")
    s.add_argument("--index", type=int, default=0, help="row of --pose-kitti")
    s.add_argument("--history", help="KITTI file with the two previous relative poses (motion term)")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("map-build", parents=[common], help="world point map from frames and a trajectory")
    s.add_argument("--frames", required=True, help="directory of PLY frames (or a dataset directory)")
    s.add_argument("--traj", required=True, help="KITTI poses, one per frame")
    s.add_argument("--times", help="timestamps for --traj")
    s.add_argument("--dataset", help="dataset directory with priors/ and camera.toml for coloring")
    s.add_argument("--views-out", help="write a views TOML for gs-optimize (needs --dataset)")
    s.add_argument("--all-frames", action="store_true", help="use every frame, not only up to the last view")
    s.add_argument("--voxel", type=float, help="mapping.voxel")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_map_build)

    s = sub.add_parser("gs-optimize", parents=[common], help="optimize a gaussian map against camera priors")
    s.add_argument("--map", required=True, help="initial colored PLY map")
    s.add_argument("--views", required=True, help="views TOML")
    s.add_argument("--iters", type=int, help="gaussmap.iterations")
    s.add_argument("--out", required=True, help="map checkpoint (.gmap)")
    s.set_defaults(func=cmd_gs_optimize)

    s = sub.add_parser("render", parents=[common], help="render a map checkpoint")
    s.add_argument("--map", required=True)
    s.add_argument("--camera", required=True, help="camera TOML")
    s.add_argument("--pose-kitti", help="body pose from a KITTI file")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out", required=True, help="color PPM")
    s.add_argument("--depth-out", help="depth PFM")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("export-points", parents=[common], help="gaussian centers back to a point map")
    s.add_argument("--map", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("eval-odom", parents=[common], help="trajectory errors against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--est-times")
    s.add_argument("--gt-times")
    s.add_argument("--mode", choices=("kitti", "framewise", "all"), default="all")
    s.add_argument("--interp", action="store_true", help="interpolate ground truth at estimate timestamps")
    s.add_argument("--no-align", action="store_true", help="ATE without rigid alignment")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval_odom)

    s = sub.add_parser("eval-map", parents=[common], help="point-map (and optional image) quality")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--thr", type=float, help="metrics.fscore_thr")
    s.add_argument("--image", help="rendered PPM for PSNR/SSIM")
    s.add_argument("--reference", help="reference PPM for PSNR/SSIM")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval_map)

    s = sub.add_parser("pipeline", parents=[common], help="run the configured stages end to end")
    s.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    s.add_argument("--out", help="pipeline.out")
    s.add_argument("--iters", type=int, help="gaussmap.iterations")
    s.set_defaults(func=cmd_pipeline)
    return p


# flag name -> config key
FLAG_KEYS = {
    "seed": "general.seed",
    "threads": "general.threads",
    "sim_frames": "sim.frames",
    "keyframe_stride": "sim.keyframe_stride",
    "voxel": "mapping.voxel",
    "iters": "gaussmap.iterations",
    "thr": "metrics.fscore_thr",
    "stages": "pipeline.stages",
}


def resolve_config(args) -> PipelineConfig:
    overrides = _parse_set(args.set)
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if args.command == "pipeline" and args.out is not None:
        overrides["pipeline.out"] = args.out
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.quiet, args.verbose)
    try:
        cfg = resolve_config(args)
    except (RadarSplatError, OSError, argparse.ArgumentTypeError) as exc:
        log.error("stage=config error=%s", exc)
        return 2
    set_threads(cfg.general.threads)
    try:
        return args.func(args, cfg)
    except (RadarSplatError, OSError, ValueError, KeyError) as exc:
        log.error("command=%s error=%s: %s", args.command, type(exc).__name__, exc)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
