"""End-to-end run: simulate -> odom -> map-build -> gs-optimize -> render/export -> eval.

Every stage writes its artifacts under the output directory and keeps its
results in a shared context, so a stage that is not selected can be
replaced by artifacts already on disk (for example ``odom,eval-odom`` on a
dataset simulated earlier).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sim
from .config import STAGES, PipelineConfig, dumps
from .core import Trajectory
from .gaussmap import Schedule, export_points, init_from_points, load_map, optimize_with_stats, render, save_map
from .imaging import psnr, ssim
from .io import read_kitti, read_points_ply, write_kitti, write_pfm, write_points_ply, write_ppm
from .mapping import map_build, voxel_downsample
from .metrics import associate, fscore, map_report, odom_report
from .odometry import run_odometry

log = logging.getLogger(__name__)


@dataclass
class Summary:
    """Deterministic results (``values``) plus wall-clock timings kept apart from them."""

    values: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v == "ok" for v in self.status.values())

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        for st, v in self.status.items():
            w.writerow([f"status.{st}", v])
        for k, v in self.values.items():
            w.writerow([k, _fmt(v)])
        return buf.getvalue()

    def text(self) -> str:
        lines = []
        for st, v in self.status.items():
            extra = f" error={self.errors[st]}" if st in self.errors else ""
            t = self.timings.get(st)
            lines.append(f"stage={st} status={v}" + (f" seconds={t:.2f}" if t is not None else "") + extra)
        for k, v in self.values.items():
            lines.append(f"{k}={_fmt(v)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class _Context:
    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg, self.out = cfg, out
        self.dataset_dir = out / "dataset"
        self.data: sim.Dataset | None = None
        self.scene = None
        self.traj: Trajectory | None = None
        self.views = None
        self.points = self.colors = None
        self.gmap = None
        self.renders = {}

    def dataset(self) -> sim.Dataset:
        if self.data is None:
            self.data = sim.load_dataset(self.dataset_dir)
        return self.data

    def trajectory(self) -> Trajectory:
        if self.traj is None:
            self.traj = read_kitti(self.out / "odom" / "traj.kitti", self.out / "odom" / "times.txt")
        return self.traj


def _traj_spec(cfg: PipelineConfig) -> sim.TrajectorySpec:
    base = sim.default_trajectory_spec(cfg.sim.frames)
    return sim.TrajectorySpec(base.waypoints, cfg.sim.speed, cfg.sim.rate, cfg.sim.frames, cfg.sim.height)


def _stage_simulate(ctx: _Context, summary: Summary) -> None:
    cfg = ctx.cfg
    seq = sim.generate_sequence(sim.default_scene_spec(cfg.general.seed), _traj_spec(cfg), cfg.radar, cfg.camera,
                                ctx.dataset_dir, cfg.sim.keyframe_stride, cfg.general.seed)
    ctx.scene = seq.scene
    summary.values["sim.frames"] = len(seq.frames)
    summary.values["sim.keyframes"] = len(seq.keyframes)
    summary.values["sim.points_total"] = int(sum(len(f) for f in seq.frames))


def _stage_odom(ctx: _Context, summary: Summary) -> None:
    data = ctx.dataset()
    res = run_odometry(data.frames, ctx.cfg.odometry_config())
    d = ctx.out / "odom"
    d.mkdir(parents=True, exist_ok=True)
    write_kitti(d / "traj.kitti", res.trajectory, d / "times.txt")
    write_diagnostics(d / "diag.csv", res.diagnostics)
    ctx.traj = res.trajectory
    summary.values["odom.refined"] = int(sum(e.refined for e in res.estimates))
    summary.values["odom.pairs"] = len(res.estimates)


def write_diagnostics(path, diagnostics) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "refined", "cs_div", "cwd", "occ", "motion"])
        for dg in diagnostics:
            w.writerow([dg.frame, int(dg.refined), repr(dg.cs_div), repr(dg.cwd), repr(dg.occ), repr(dg.motion)])


def _stage_eval_odom(ctx: _Context, summary: Summary) -> None:
    data = ctx.dataset()
    if data.gt is None:
        raise FileNotFoundError("dataset has no ground-truth poses")
    est, gt = associate(ctx.trajectory(), data.gt, ctx.cfg.metrics.max_skew)
    rep = odom_report(est, gt, ctx.cfg.metrics.rpe_lengths)
    for k, v in rep.as_dict().items():
        summary.values[f"odom.{k}"] = v
    summary.values["odom.path_length"] = float(gt.path_length())


def _views(ctx: _Context, traj: Trajectory):
    data = ctx.dataset()
    if data.cam_model is None:
        raise FileNotFoundError("dataset has no camera.toml")
    keys = [k for k in data.keyframes if k < len(traj)]
    if ctx.cfg.mapping.views > 0:
        keys = keys[: ctx.cfg.mapping.views]
    return keys, {k: (data.cam_model.camera(traj[k]), data.priors[k]) for k in keys}


def _mapping_trajectory(ctx: _Context) -> Trajectory:
    if ctx.cfg.mapping.trajectory == "gt":
        if ctx.dataset().gt is None:
            raise FileNotFoundError("mapping.trajectory=gt but the dataset has no ground truth")
        return ctx.dataset().gt
    traj = ctx.trajectory()
    gt = ctx.dataset().gt
    if gt is not None and len(gt):
        # odometry starts at the identity; the start pose is taken as known so the
        # map lands in the reference frame
        traj = traj.anchored().transformed(gt[0])
    return traj


def _stage_map_build(ctx: _Context, summary: Summary) -> None:
    traj = _mapping_trajectory(ctx)
    keys, views = _views(ctx, traj)
    data = ctx.dataset()
    last = keys[-1] if keys else len(data.frames) - 1
    pts, cols, _ = map_build(data.frames[: last + 1], traj, views)
    pts, cols = voxel_downsample(pts, cols, ctx.cfg.mapping.voxel)
    d = ctx.out / "map"
    d.mkdir(parents=True, exist_ok=True)
    write_points_ply(d / "initial.ply", pts, cols)
    ctx.points, ctx.colors = pts, cols
    summary.values["map.initial_points"] = len(pts)


def _stage_gs_optimize(ctx: _Context, summary: Summary) -> None:
    if ctx.points is None:
        ctx.points, ctx.colors = read_points_ply(ctx.out / "map" / "initial.ply")
    traj = _mapping_trajectory(ctx)
    keys, views = _views(ctx, traj)
    if not views:
        raise ValueError("no keyframe views to optimize against")
    g0 = init_from_points(ctx.points, ctx.colors)
    sched: Schedule = ctx.cfg.gaussmap
    g1, stats = optimize_with_stats(g0, [views[k] for k in keys], sched)
    save_map(ctx.out / "map" / "map.gmap", g1)
    ctx.gmap = g1
    summary.values["gs.count_before"] = len(g0)
    summary.values["gs.count_after"] = len(g1)
    summary.values["gs.ground_added"] = stats.ground_added
    summary.values["gs.sky_flagged"] = int(g1.sky.sum())
    summary.values["gs.nan_grads"] = stats.nan_grads
    summary.values["gs.loss_first"] = stats.losses[0] if stats.losses else float("nan")
    summary.values["gs.loss_last"] = stats.losses[-1] if stats.losses else float("nan")


def _load_gmap(ctx: _Context):
    if ctx.gmap is None:
        ctx.gmap = load_map(ctx.out / "map" / "map.gmap")
    return ctx.gmap


def _stage_render(ctx: _Context, summary: Summary) -> None:
    gmap = _load_gmap(ctx)
    keys, views = _views(ctx, _mapping_trajectory(ctx))
    d = ctx.out / "render"
    d.mkdir(parents=True, exist_ok=True)
    ps, ss = [], []
    for k in keys:
        cam, pri = views[k]
        buf = render(gmap, cam)
        write_ppm(d / f"{k:06d}.ppm", buf.color)
        write_pfm(d / f"{k:06d}.pfm", buf.depth)
        ctx.renders[k] = buf
        ps.append(psnr(buf.color, pri.image))
        ss.append(ssim(buf.color, pri.image))
    summary.values["render.views"] = len(keys)
    summary.values["render.psnr"] = float(np.mean(ps)) if ps else float("nan")
    summary.values["render.ssim"] = float(np.mean(ss)) if ss else float("nan")


def _stage_export(ctx: _Context, summary: Summary) -> None:
    pts, cols = export_points(_load_gmap(ctx), ctx.cfg.metrics.export_opacity)
    write_points_ply(ctx.out / "map" / "points.ply", pts, cols)
    summary.values["export.points"] = len(pts)


def _stage_eval_map(ctx: _Context, summary: Summary) -> None:
    data = ctx.dataset()
    if data.reference is None:
        raise FileNotFoundError("dataset has no reference cloud")
    ref, _ = read_points_ply(data.reference)
    est, _ = read_points_ply(ctx.out / "map" / "points.ply")
    init, _ = read_points_ply(ctx.out / "map" / "initial.ply")
    thr = ctx.cfg.metrics.fscore_thr
    rep = map_report(est, ref, thr)
    for k in ("chamfer_l1", "mhd", "fscore"):
        summary.values[f"map.{k}"] = getattr(rep, k)
    summary.values["map.fscore_initial"] = fscore(init, ref, thr)


_RUNNERS = {
    "simulate": _stage_simulate,
    "odom": _stage_odom,
    "eval-odom": _stage_eval_odom,
    "map-build": _stage_map_build,
    "gs-optimize": _stage_gs_optimize,
    "render": _stage_render,
    "export-points": _stage_export,
    "eval-map": _stage_eval_map,
}
assert set(_RUNNERS) == set(STAGES)


def run_pipeline(cfg: PipelineConfig, out=None) -> Summary:
    """Run the configured stages in canonical order; stops at the first failing stage.

    Writes ``config.toml``, ``summary.csv`` (deterministic values only),
    ``summary.txt`` and ``timings.csv`` into the output directory.
    """
    out = Path(out if out is not None else cfg.pipeline.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps(cfg))
    ctx = _Context(cfg, out)
    summary = Summary()
    selected = [st for st in STAGES if st in cfg.pipeline.stages]
    for st in selected:
        t0 = time.perf_counter()
        try:
            _RUNNERS[st](ctx, summary)
        except Exception as exc:  # surfaced with the stage name, then the run stops
            summary.status[st] = "failed"
            summary.errors[st] = f"{type(exc).__name__}: {exc}"
            summary.timings[st] = time.perf_counter() - t0
            log.error("stage=%s status=failed error=%s", st, summary.errors[st])
            break
        summary.status[st] = "ok"
        summary.timings[st] = time.perf_counter() - t0
        log.info("stage=%s status=ok seconds=%.2f", st, summary.timings[st])
    for st in selected:
        summary.status.setdefault(st, "skipped")
    (out / "summary.csv").write_text(summary.csv())
    (out / "summary.txt").write_text(summary.text())
    with open(out / "timings.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["stage", "seconds"])
        for st, t in summary.timings.items():
            w.writerow([st, f"{t:.3f}"])
    return summary
