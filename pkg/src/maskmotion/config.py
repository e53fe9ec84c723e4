"""Run configuration: one YAML document describes a training or evaluation run.

Parsing is strict: unknown keys are rejected with their dotted path, stage
sections must match the declared stage, and values that exist in two places
(seed, episode cap) must agree. parse -> dump -> parse is the identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .character import MotionClip, character_preset, load_clip
from .envs import EnvConfig
from .errors import ConfigError
from .masking import PARTITION_PRESETS, BodyPartition
from .ppo import TrainConfig
from .synth import desk_bundle

STAGES = ("base", "compose", "track")


def _mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path} must be a mapping")
    return dict(value)


def _reject_unknown(d: dict, known: set[str], path: str) -> None:
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]!r}")


def _dataclass_from(cls, d: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(d, known, path)
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from None


@dataclass(frozen=True)
class ComposeConfig:
    """Second-stage splicing: which clips and which part subsets to blend."""

    base_ckpt: str = ""
    clip_a: str = "synth:style_a"
    clip_b: str = "synth:overlay"
    subsets: tuple[tuple[str, ...], ...] = (("LeftArm", "RightArm"),)

    def __post_init__(self) -> None:
        if not self.base_ckpt:
            raise ConfigError("compose.base_ckpt is required")
        if not self.subsets or any(not s for s in self.subsets):
            raise ConfigError("compose.subsets must be non-empty part-name lists")


@dataclass(frozen=True)
class TrackConfig:
    """Second-stage command tracking parameters."""

    base_ckpt: str = ""
    commands: tuple[str, ...] = ("rest", "raise_arms")
    phi_k_mode: str = "complement"
    track_weight: float = 0.5
    goal_refresh_every: int = 10
    goal_buffer_size: int = 16
    low_reward_window: int = 30
    low_reward_threshold: float = 0.1

    def __post_init__(self) -> None:
        if not self.base_ckpt:
            raise ConfigError("track.base_ckpt is required")
        if not self.commands:
            raise ConfigError("track.commands must be non-empty")


@dataclass(frozen=True)
class TaskConfig:
    """Optional goal task mixed into base training or evaluated standalone."""

    name: str = ""
    weight: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigError("task.name is required")
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigError("task.weight must be in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    stage: str = "base"
    character: str = "desk"
    seed: int = 0
    out_dir: str = "runs/out"
    clips: tuple[str, ...] = ("synth",)
    synth_frames: int = 90
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    partition: BodyPartition | None = None
    compose: ComposeConfig | None = None
    track: TrackConfig | None = None
    task: TaskConfig | None = None

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.stage == "compose" and self.compose is None:
            raise ConfigError("stage 'compose' needs a compose: section")
        if self.stage == "track" and self.track is None:
            raise ConfigError("stage 'track' needs a track: section")
        if self.train.seed != self.seed:
            raise ConfigError("seed is set at the top level; train.seed must match")
        if self.train.max_steps != self.env.max_steps:
            raise ConfigError("episode cap mismatch between env and train sections")


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    raw = _mapping(raw, "config")

    known = {
        "stage", "character", "seed", "out_dir", "clips", "synth_frames",
        "env", "train", "partition", "compose", "track", "task",
    }
    _reject_unknown(raw, known, "config")

    seed = int(raw.get("seed", 0))

    env_d = _mapping(raw.get("env"), "env")
    train_d = _mapping(raw.get("train"), "train")
    if "seed" in train_d and int(train_d["seed"]) != seed:
        raise ConfigError("seed is set at the top level; train.seed must match")
    train_d["seed"] = seed
    # one episode cap: env.max_steps governs, train mirrors it
    t_ms, e_ms = train_d.get("max_steps"), env_d.get("max_steps")
    if t_ms is not None and e_ms is not None and int(t_ms) != int(e_ms):
        raise ConfigError("episode cap mismatch between env and train sections")
    cap = int(e_ms if e_ms is not None else (t_ms if t_ms is not None else 300))
    env_d["max_steps"] = cap
    train_d["max_steps"] = cap

    env_known = {f.name for f in dataclasses.fields(EnvConfig)}
    _reject_unknown(env_d, env_known, "env")
    env = EnvConfig(**env_d)
    train = TrainConfig.from_dict(train_d)

    partition = None
    if raw.get("partition") is not None:
        partition = BodyPartition.from_dict(_mapping(raw["partition"], "partition"))

    compose = None
    if raw.get("compose") is not None:
        d = _mapping(raw["compose"], "compose")
        if "subsets" in d:
            d["subsets"] = tuple(tuple(str(p) for p in s) for s in d["subsets"])
        compose = _dataclass_from(ComposeConfig, d, "compose")

    track = None
    if raw.get("track") is not None:
        d = _mapping(raw["track"], "track")
        if "commands" in d:
            d["commands"] = tuple(str(c) for c in d["commands"])
        track = _dataclass_from(TrackConfig, d, "track")

    task = None
    if raw.get("task") is not None:
        task = _dataclass_from(TaskConfig, _mapping(raw["task"], "task"), "task")

    clips = raw.get("clips", ["synth"])
    if isinstance(clips, str):
        clips = [clips]
    if not isinstance(clips, list) or not clips:
        raise ConfigError("clips must be a non-empty list of entries")

    return RunConfig(
        stage=str(raw.get("stage", "base")),
        character=str(raw.get("character", "desk")),
        seed=seed,
        out_dir=str(raw.get("out_dir", "runs/out")),
        clips=tuple(str(c) for c in clips),
        synth_frames=int(raw.get("synth_frames", 90)),
        env=env,
        train=train,
        partition=partition,
        compose=compose,
        track=track,
        task=task,
    )


def dump_config(cfg: RunConfig) -> str:
    doc = {
        "stage": cfg.stage,
        "character": cfg.character,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "clips": list(cfg.clips),
        "synth_frames": cfg.synth_frames,
        "env": dataclasses.asdict(cfg.env),
        "train": cfg.train.to_dict(),
        "partition": None if cfg.partition is None else cfg.partition.to_dict(),
        "compose": None if cfg.compose is None else {
            "base_ckpt": cfg.compose.base_ckpt,
            "clip_a": cfg.compose.clip_a,
            "clip_b": cfg.compose.clip_b,
            "subsets": [list(s) for s in cfg.compose.subsets],
        },
        "track": None if cfg.track is None else {
            "base_ckpt": cfg.track.base_ckpt,
            "commands": list(cfg.track.commands),
            "phi_k_mode": cfg.track.phi_k_mode,
            "track_weight": cfg.track.track_weight,
            "goal_refresh_every": cfg.track.goal_refresh_every,
            "goal_buffer_size": cfg.track.goal_buffer_size,
            "low_reward_window": cfg.track.low_reward_window,
            "low_reward_threshold": cfg.track.low_reward_threshold,
        },
        "task": None if cfg.task is None else {
            "name": cfg.task.name,
            "weight": cfg.task.weight,
            "params": dict(cfg.task.params),
        },
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))


def load_character(cfg: RunConfig):
    """(spec, root_height, partition) for the configured character."""
    spec, root_height = character_preset(cfg.character)
    if cfg.partition is not None:
        partition = cfg.partition
        partition.validate_for(spec)
    else:
        try:
            partition = PARTITION_PRESETS[cfg.character](spec)
        except KeyError:
            raise ConfigError(
                f"no partition preset for character {cfg.character!r}; add a partition: section"
            ) from None
    return spec, root_height, partition


def resolve_clip(entry: str, cfg: RunConfig) -> list[MotionClip]:
    """One clips entry -> clips. 'synth' is the bundled pair, 'synth:<name>'
    one bundled clip, anything else a clip file path."""
    if entry == "synth" or entry.startswith("synth:"):
        if cfg.character != "desk":
            raise ConfigError("synthetic clips are defined for the desk character only")
        bundle = desk_bundle(frames=cfg.synth_frames)
        if entry == "synth":
            return list(bundle.clips)
        name = entry.split(":", 1)[1]
        if name not in ("style_a", "style_b", "overlay"):
            raise ConfigError(
                f"unknown synthetic clip {name!r}; choose style_a, style_b or overlay"
            )
        return [getattr(bundle, name)]
    return [load_clip(entry)]


def resolve_clips(cfg: RunConfig) -> list[MotionClip]:
    out: list[MotionClip] = []
    for entry in cfg.clips:
        out.extend(resolve_clip(entry, cfg))
    if not out:
        raise ConfigError("no clips resolved")
    return out
