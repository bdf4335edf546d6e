"""INI configuration shared by the command line and the demos.

Every key is optional; missing keys keep the built-in defaults and the name
``default`` (or no file at all) means all defaults. Example::

    [scene]
    speed_max = 11.0
    [predictor]
    per_frame_error_m = 0.005
    [pipeline]
    trigger_mode = ttc_threshold
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .actuation import RailSpec
from .events import SensorGeometry
from .pipeline import PipelineConfig
from .predictor import ANALYTIC, PredictorConfig, calibrate_noise_profile
from .scene import CameraModel, NoiseSpec, SceneConfig

# per-frame MAE (m) of the reference perception stage
REFERENCE_FRAME_ERROR_M = 0.007809


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    predictor: PredictorConfig = field(default_factory=lambda: calibrate_noise_profile(REFERENCE_FRAME_ERROR_M))
    rail: RailSpec = field(default_factory=RailSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    episodes: int = 120


def _typed(section, cls, skip=()):
    """Pull the dataclass fields of ``cls`` present in ``section``, typed by their defaults."""
    out = {}
    defaults = cls()
    for f in fields(cls):
        if f.name in skip or f.name not in section:
            continue
        cur = getattr(defaults, f.name)
        raw = section[f.name]
        try:
            if isinstance(cur, bool):
                out[f.name] = section.getboolean(f.name)
            elif isinstance(cur, int):
                out[f.name] = int(raw)
            elif isinstance(cur, float):
                out[f.name] = float(raw)
            else:
                out[f.name] = raw
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {f.name}: {exc}") from None
    return out


def _known(section, allowed):
    extra = set(section) - set(allowed) - set(section.parser.defaults())
    if extra:
        raise ConfigError(f"[{section.name}] unknown keys: {', '.join(sorted(extra))}")


def load_config(path: str | Path | None = None, *, seed: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path not in (None, "default"):
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cp.read(p)
    try:
        return _build(cp, seed)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _build(cp: configparser.ConfigParser, seed) -> RunConfig:
    known = {"scene", "camera", "noise", "predictor", "rail", "pipeline", "campaign"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    sec = {name: cp[name] if cp.has_section(name) else None for name in known}

    cam = CameraModel()
    if sec["camera"] is not None:
        s = sec["camera"]
        _known(s, ("width", "height", "focal_px", "near_m"))
        geom = SensorGeometry(s.getint("width", 640), s.getint("height", 480))
        cam = CameraModel(geom, focal_px=s.getfloat("focal_px", 500.0), near_m=s.getfloat("near_m", 0.1))

    noise = NoiseSpec()
    if sec["noise"] is not None:
        s = sec["noise"]
        _known(s, ("spurious_rate", "jitter_px", "background_rate", "background_blobs"))
        noise = replace(noise, **_typed(s, NoiseSpec, skip=("background_region",)))

    scene = SceneConfig(camera=cam, noise=noise)
    if sec["scene"] is not None:
        s = sec["scene"]
        base = _typed(s, SceneConfig, skip=("target_x_range", "speed_range", "spin_range", "camera", "noise"))
        _known(s, list(base) + ["target_x_min", "target_x_max", "speed_min", "speed_max"] + [f.name for f in fields(SceneConfig)])
        tx = (s.getfloat("target_x_min", scene.target_x_range[0]), s.getfloat("target_x_max", scene.target_x_range[1]))
        sp = (s.getfloat("speed_min", scene.speed_range[0]), s.getfloat("speed_max", scene.speed_range[1]))
        scene = replace(scene, target_x_range=tx, speed_range=sp, **base)

    rail = RailSpec()
    if sec["rail"] is not None:
        _known(sec["rail"], [f.name for f in fields(RailSpec)])
        rail = RailSpec(**_typed(sec["rail"], RailSpec))

    pipe = PipelineConfig()
    if sec["pipeline"] is not None:
        _known(sec["pipeline"], [f.name for f in fields(PipelineConfig)])
        pipe = PipelineConfig(**_typed(sec["pipeline"], PipelineConfig))

    pred = RunConfig().predictor
    if sec["predictor"] is not None:
        s = sec["predictor"]
        extra = ("per_frame_error_m", "early_late_ratio", "ttc_error_us")
        _known(s, [f.name for f in fields(PredictorConfig)] + list(extra))
        kind = s.get("kind", pred.kind)
        if kind == ANALYTIC:
            pred = PredictorConfig(kind=ANALYTIC, ball_radius_m=scene.ball_radius)
        else:
            pred = calibrate_noise_profile(
                s.getfloat("per_frame_error_m", REFERENCE_FRAME_ERROR_M),
                early_late_ratio=s.getfloat("early_late_ratio", 10.0),
                target_ttc_error_us=s.getfloat("ttc_error_us", 8_990.0),
            )
        explicit = _typed(s, PredictorConfig, skip=("kind", "speed_bounds_mps"))
        if explicit:
            pred = replace(pred, **explicit)

    episodes = 120
    if sec["campaign"] is not None:
        _known(sec["campaign"], ("episodes",))
        episodes = sec["campaign"].getint("episodes", 120)
    if seed is not None:
        pipe = replace(pipe, seed=seed)
    return RunConfig(scene, pred, rail, pipe, episodes)
