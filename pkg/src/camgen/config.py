"""Flat key=value pipeline configuration, presets, and token-layout arithmetic."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .vidcodec import grid_shape

PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    """A configuration value violates its constraint; message names the key."""


@dataclass(frozen=True)
class PipelineConfig:
    frames: int = 17
    height: int = 32
    width: int = 32
    fov_deg: float = 60.0
    cam_levels: int = 4
    cam_vocab: int = 64
    cam_window: int = 6
    cam_positions: int = 0  # 0 = derive as 6*frames/cam_window
    vid_vocab: int = 512
    model_layers: int = 4
    model_heads: int = 4
    model_width: int = 128
    model_ff: int = 512
    model_context: int = 0  # 0 = derive from the sequence layout
    steps: int = 3000
    lr: float = 1e-3
    batch: int = 16
    clip_norm: float = 1.0
    mix_ratio: float = 0.7
    snapshot_every: int = 500
    seed: int = 0
    speed_min: float = 0.04
    speed_max: float = 0.10
    rot_cap: float = 0.0
    clips_per_scene: int = 8
    signature: bool = False
    sample_temperature: float = 0.8
    flow_levels: int = 3
    flow_iters: int = 100
    flow_alpha: float = 0.1
    kmeans_iters: int = 30
    dataset_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


_FIELDS = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse `key = value` lines ('#' comments allowed) over a base config."""
    cfg = base or PipelineConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown configuration key")
        updates[key] = _coerce(key, raw)
    return replace(cfg, **updates)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    return parse_config(Path(path).read_text(), base)


def load_preset(name: str) -> PipelineConfig:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; valid: {', '.join(PRESETS)}")
    text = importlib.resources.files("camgen.presets").joinpath(f"{name}.cfg").read_text()
    return parse_config(text)


def config_text(cfg: PipelineConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(PipelineConfig))


def validate(cfg: PipelineConfig) -> PipelineConfig:
    """Raise ConfigError naming the offending key on any constraint violation."""
    if cfg.frames < 5 or cfg.frames % 4 != 1:
        raise ConfigError(f"frames: {cfg.frames} must be >= 5 and equal 1 mod 4")
    for key in ("height", "width"):
        v = getattr(cfg, key)
        if v < 8 or v % 8 != 0:
            raise ConfigError(f"{key}: {v} must be a positive multiple of 8")
    if not 0.0 <= cfg.mix_ratio <= 1.0:
        raise ConfigError(f"mix_ratio: {cfg.mix_ratio} outside [0, 1]")
    if cfg.cam_levels < 1:
        raise ConfigError(f"cam_levels: {cfg.cam_levels} must be >= 1")
    if not 2 <= cfg.cam_vocab <= 0xFFFF:
        raise ConfigError(f"cam_vocab: {cfg.cam_vocab} must be in [2, 65535]")
    if cfg.vid_vocab < 2:
        raise ConfigError(f"vid_vocab: {cfg.vid_vocab} must be >= 2")
    if cfg.cam_window < 1:
        raise ConfigError(f"cam_window: {cfg.cam_window} must be >= 1")
    if cfg.cam_positions == 0 and (signal_width(cfg) * cfg.frames) % cfg.cam_window != 0:
        raise ConfigError(
            f"cam_window: {cfg.cam_window} does not divide the signal length "
            f"{signal_width(cfg) * cfg.frames}"
        )
    if cfg.cam_positions < 0:
        raise ConfigError(f"cam_positions: {cfg.cam_positions} must be >= 0")
    if cfg.model_width % cfg.model_heads != 0:
        raise ConfigError(f"model_heads: {cfg.model_heads} must divide model_width {cfg.model_width}")
    if cfg.speed_min < 0 or cfg.speed_max < cfg.speed_min:
        raise ConfigError(f"speed_min: need 0 <= speed_min <= speed_max, got [{cfg.speed_min}, {cfg.speed_max}]")
    if cfg.batch < 1:
        raise ConfigError(f"batch: {cfg.batch} must be >= 1")
    if cfg.snapshot_every < 1:
        raise ConfigError(f"snapshot_every: {cfg.snapshot_every} must be >= 1")
    if cfg.clips_per_scene < 1:
        raise ConfigError(f"clips_per_scene: {cfg.clips_per_scene} must be >= 1")
    if not 0.0 < cfg.sample_temperature or cfg.sample_temperature > 10.0:
        raise ConfigError(f"sample_temperature: {cfg.sample_temperature} outside (0, 10]")
    return cfg


@dataclass(frozen=True)
class Layout:
    cam_positions: int
    cam_levels: int
    camera_tokens: int
    grid: tuple
    first_frame_tokens: int
    video_tokens: int
    sequence_length: int
    context: int


def signal_width(cfg: PipelineConfig) -> int:
    """Samples per frame in the camera signal: 6 deltas, doubled when the
    sinusoid signature channel is appended."""
    return 12 if cfg.signature else 6


def layout(cfg: PipelineConfig) -> Layout:
    """Token arithmetic for a config: camera span, video span, sequence length."""
    validate(cfg)
    positions = cfg.cam_positions or (signal_width(cfg) * cfg.frames) // cfg.cam_window
    camera = positions * cfg.cam_levels
    grid = grid_shape(cfg.frames, cfg.height, cfg.width)
    tt, th, tw = grid
    video = tt * th * tw
    seq = 6 + camera + video
    context = cfg.model_context or seq
    if context < seq:
        raise ConfigError(f"model_context: {context} is below the sequence length {seq}")
    return Layout(positions, cfg.cam_levels, camera, grid, th * tw, video, seq, context)
