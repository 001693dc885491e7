"""Pipeline configuration: one TOML document with a table per stage.

Each table maps onto an existing parameter dataclass (``gaussmap`` onto
Schedule, ``radar`` onto RadarModel, ...) so defaults live in one place;
the ``preprocess``, ``supervision`` and ``odometry`` tables together make
up OdometryConfig. Unknown tables or keys are rejected, values
are coerced to the default's type and checked against the stage
preconditions when the config is built.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, make_dataclass
from pathlib import Path

from .errors import ConfigError
from .gaussmap.optimize import Schedule
from .metrics import FSCORE_THRESHOLD, MAX_SKEW, RPE_LENGTHS
from .odometry import OdometryConfig
from .sim import CameraModel, RadarModel, tomllib

STAGES = ("simulate", "odom", "eval-odom", "map-build", "gs-optimize", "render", "export-points", "eval-map")


@dataclass(frozen=True)
class GeneralConfig:
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class SimConfig:
    """Default scene and trajectory knobs (the full scene layout is built in code)."""

    frames: int = 50
    speed: float = 8.0  # m/s
    rate: float = 10.0  # Hz
    height: float = 1.0  # m
    keyframe_stride: int = 5


_ODO = OdometryConfig()
PREPROCESS_KEYS = ("z_min", "z_max", "dbscan_eps", "dbscan_min_pts", "sample_n")
SUPERVISION_KEYS = ("gmm_bandwidth", "cwd_delta", "cwd_eps", "cwd_radius", "cwd_weighting", "occ_rings",
                    "occ_sectors", "occ_rmax", "eps_r", "eps_t", "lambda_cm", "tau")
ODOMETRY_KEYS = ("max_iters", "tol", "reject_ratio")
assert set(PREPROCESS_KEYS + SUPERVISION_KEYS + ODOMETRY_KEYS) == {f.name for f in dataclasses.fields(_ODO)}


def _odometry_part(name: str, keys) -> type:
    return make_dataclass(name, [(k, type(getattr(_ODO, k)), field(default=getattr(_ODO, k))) for k in keys],
                          frozen=True)


PreprocessConfig = _odometry_part("PreprocessConfig", PREPROCESS_KEYS)
SupervisionConfig = _odometry_part("SupervisionConfig", SUPERVISION_KEYS)
OdometrySection = _odometry_part("OdometrySection", ODOMETRY_KEYS)


@dataclass(frozen=True)
class MappingConfig:
    trajectory: str = "odom"  # "odom" or "gt"
    views: int = 5  # keyframe views used for optimization (0 = all)
    voxel: float = 0.3  # m, initial map downsampling (0 disables)


@dataclass(frozen=True)
class MetricsConfig:
    fscore_thr: float = FSCORE_THRESHOLD
    rpe_lengths: tuple = RPE_LENGTHS
    max_skew: float = MAX_SKEW
    export_opacity: float = 0.1


@dataclass(frozen=True)
class PipelineSection:
    stages: tuple = STAGES
    out: str = "run"


SECTIONS = {
    "general": GeneralConfig,
    "sim": SimConfig,
    "radar": RadarModel,
    "camera": CameraModel,
    "preprocess": PreprocessConfig,
    "supervision": SupervisionConfig,
    "odometry": OdometrySection,
    "mapping": MappingConfig,
    "gaussmap": Schedule,
    "metrics": MetricsConfig,
    "pipeline": PipelineSection,
}


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        proto = default[0] if default else None
        return tuple(_coerce(name, v, proto) if proto is not None else v for v in value)
    return value


def _section_defaults(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}


@dataclass(frozen=True)
class PipelineConfig:
    general: GeneralConfig = field(default_factory=GeneralConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    radar: RadarModel = field(default_factory=RadarModel)
    camera: CameraModel = field(default_factory=CameraModel)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    supervision: SupervisionConfig = field(default_factory=SupervisionConfig)
    odometry: OdometrySection = field(default_factory=OdometrySection)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    gaussmap: Schedule = field(default_factory=Schedule)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    pipeline: PipelineSection = field(default_factory=PipelineSection)

    def __post_init__(self):
        validate(self)

    def odometry_config(self) -> OdometryConfig:
        kw = {}
        for sec in (self.preprocess, self.supervision, self.odometry):
            kw.update(dataclasses.asdict(sec))
        return OdometryConfig(**kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        sections = {}
        for name, sec_cls in SECTIONS.items():
            values = doc.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"[{name}] must be a table")
            defaults = _section_defaults(sec_cls)
            bad = set(values) - set(defaults)
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
            kw = {k: _coerce(f"{name}.{k}", v, defaults[k]) for k, v in values.items()}
            try:
                sections[name] = sec_cls(**kw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        return cls(**sections)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        return out

    def flat(self) -> dict:
        """``section.key`` -> value for every setting."""
        return {f"{s}.{k}": v for s, table in self.to_dict().items() for k, v in table.items()}

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply ``{"section.key": value}`` overrides (values may be strings from the command line)."""
        doc = self.to_dict()
        for dotted, value in overrides.items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            sec, key = dotted.split(".", 1)
            if sec not in doc or key not in doc[sec]:
                raise ConfigError(f"unknown config key {dotted!r}")
            doc[sec][key] = _parse_override(value, doc[sec][key]) if isinstance(value, str) else value
        return PipelineConfig.from_dict(doc)


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _parse_override(text: str, current):
    if isinstance(current, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"expected an integer, got {text!r}") from exc
    if isinstance(current, float):
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"expected a number, got {text!r}") from exc
    if isinstance(current, list):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if current and isinstance(current[0], (int, float)) and not isinstance(current[0], bool):
            return [type(current[0])(float(t)) if isinstance(current[0], int) else float(t) for t in items]
        return items
    return text


def validate(cfg: PipelineConfig) -> None:
    """Check values against the stage preconditions; raises ConfigError."""
    errs = []

    def need(cond, msg):
        if not cond:
            errs.append(msg)

    g, s, m, gs, mt = cfg.general, cfg.sim, cfg.mapping, cfg.gaussmap, cfg.metrics
    o = cfg.odometry_config()
    need(g.threads >= 1, "general.threads must be >= 1")
    need(g.seed >= 0, "general.seed must be >= 0")
    need(s.frames >= 2, "sim.frames must be >= 2")
    need(s.speed > 0 and s.rate > 0, "sim.speed and sim.rate must be positive")
    need(s.keyframe_stride >= 1, "sim.keyframe_stride must be >= 1")
    need(cfg.camera.width >= 1 and cfg.camera.height >= 1, "camera size must be positive")
    need(0 < cfg.camera.fov_x_deg < 180, "camera.fov_x_deg must lie in (0, 180)")
    need(o.z_min < o.z_max, "preprocess.z_min must be below preprocess.z_max")
    need(o.dbscan_eps > 0 and o.dbscan_min_pts >= 1, "preprocess.dbscan_eps > 0 and dbscan_min_pts >= 1 required")
    need(o.sample_n >= 3, "preprocess.sample_n must be >= 3")
    need(o.max_iters >= 1 and o.tol > 0, "odometry.max_iters >= 1 and tol > 0 required")
    need(o.reject_ratio >= 0, "odometry.reject_ratio must be >= 0 (0 disables)")
    need(o.gmm_bandwidth > 0 and o.tau > 0, "supervision.gmm_bandwidth and tau must be positive")
    need(o.cwd_weighting in ("literal", "squared"), "supervision.cwd_weighting must be literal or squared")
    need(o.occ_rings >= 1 and o.occ_sectors >= 1 and o.occ_rmax > 0, "supervision occupancy grid must be non-empty")
    need(m.trajectory in ("odom", "gt"), "mapping.trajectory must be odom or gt")
    need(m.views >= 0 and m.voxel >= 0, "mapping.views and mapping.voxel must be >= 0")
    need(gs.iterations >= 0, "gaussmap.iterations must be >= 0")
    need(gs.lam >= 0 and gs.lam_mvc >= 0 and gs.gamma > 0, "gaussmap loss weights out of range")
    need(gs.w_depth >= 0 and gs.w_normal >= 0, "gaussmap.w_depth and w_normal must be >= 0")
    need(gs.densify_every >= 1 and gs.view_stride >= 1, "gaussmap.densify_every and view_stride must be >= 1")
    need(gs.resplit_m >= 1 and 0 < gs.resplit_alpha < 1, "gaussmap.resplit_m >= 1 and 0 < resplit_alpha < 1 required")
    need(gs.interp_k >= 1 and gs.prune_k >= 1, "gaussmap.interp_k and prune_k must be >= 1")
    need(gs.interp_factor > 0 and gs.interp_separation >= 0, "gaussmap.interp_factor > 0 and interp_separation >= 0 required")
    need(gs.tau_s > 0 and gs.tau_r > 0 and gs.prune_factor > 0, "gaussmap prune thresholds must be positive")
    need(gs.ground_stride >= 1, "gaussmap.ground_stride must be >= 1")
    need(0.0 <= gs.densify_stop <= 1.0, "gaussmap.densify_stop must lie in [0, 1]")
    need(mt.fscore_thr > 0 and mt.max_skew >= 0, "metrics.fscore_thr > 0 and max_skew >= 0 required")
    need(len(mt.rpe_lengths) > 0 and all(v > 0 for v in mt.rpe_lengths), "metrics.rpe_lengths must be positive")
    need(0 <= mt.export_opacity < 1, "metrics.export_opacity must lie in [0, 1)")
    bad = [st for st in cfg.pipeline.stages if st not in STAGES]
    need(not bad, f"unknown pipeline stage(s): {', '.join(bad)}; known: {', '.join(STAGES)}")
    if errs:
        raise ConfigError("; ".join(errs))


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the TOML file (if any), then ``section.key`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            doc = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = PipelineConfig.from_dict(doc)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def dumps(cfg: PipelineConfig) -> str:
    import tomli_w

    return tomli_w.dumps(cfg.to_dict())


def save_config(path, cfg: PipelineConfig) -> None:
    Path(path).write_text(dumps(cfg))
