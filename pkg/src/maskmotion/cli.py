"""Command-line entry points.

One verb per workflow step: train the base policy, train a residual stage on
top of it, evaluate checkpoints (visitation entropy, goal tasks, command
tracking), run the experiment grids, record a rollout as a clip file, or
serve a live session over WebSocket.  Every verb that takes --seed is
deterministic on the surrogate backend.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .character import MotionClip, save_clip
from .config import RunConfig, load_character, load_config, resolve_clip, resolve_clips
from .errors import ConfigError
from .evaluate import (
    INIT_MODES,
    EvalSettings,
    entropy_eval,
    load_stage_policy,
    record_rollout,
    task_eval,
    tracking_eval,
)
from .experiments import (
    format_ablation_table,
    format_consistency_table,
    format_entropy_report,
    run_ablation_grid,
    run_consistency_matrix,
    standard_masks,
)
from .goals import make_task
from .masking import BodyPartition
from .train_base import BaseTrainer
from .train_composition import CompositionTrainer
from .train_tracking import TrackingTrainer


# ------------------------------------------------------------------- helpers
def _ref_clips(args: argparse.Namespace) -> list[MotionClip]:
    cfg = RunConfig(clips=tuple(args.ref), synth_frames=args.synth_frames)
    return resolve_clips(cfg)


def _single_clip(entry: str, cfg: RunConfig, where: str) -> MotionClip:
    clips = resolve_clip(entry, cfg)
    if len(clips) != 1:
        raise ConfigError(f"{where} must name exactly one clip, got {len(clips)}")
    return clips[0]


def _settings(args: argparse.Namespace) -> EvalSettings:
    return EvalSettings(
        episodes=args.episodes,
        steps=args.steps,
        init=getattr(args, "init", "random"),
        seed=args.seed,
        epsilon=getattr(args, "epsilon", None),
    )


def _parse_mask_entry(text: str) -> tuple[str, ...]:
    text = text.strip()
    if text in ("", "null"):
        return ()
    return tuple(p.strip() for p in text.split("+"))


def _parse_mask_list(text: str, partition: BodyPartition) -> list[tuple[str, ...]]:
    if text == "all":
        return [()] + standard_masks(partition)
    entries = [e for e in text.split(",") if e.strip()]
    if not entries:
        raise ConfigError("empty --masks list")
    return [_parse_mask_entry(e) for e in entries]


def _parse_params(pairs: list[str]) -> dict:
    out: dict = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {pair!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _parse_cells(entries: list[str]) -> dict[float, list[str]]:
    cells: dict[float, list[str]] = {}
    for entry in entries:
        weight_s, sep, dirs = entry.partition("=")
        if not sep:
            raise ConfigError(f"expected WEIGHT=dir[,dir...], got {entry!r}")
        try:
            weight = float(weight_s)
        except ValueError:
            raise ConfigError(f"mi weight {weight_s!r} is not a number") from None
        paths = [d.strip() for d in dirs.split(",") if d.strip()]
        if not paths:
            raise ConfigError(f"no checkpoint directories in cell {entry!r}")
        cells.setdefault(weight, []).extend(paths)
    return cells


def _emit(text: str, out: str | None) -> None:
    print(text)
    if out is not None:
        Path(out).write_text(text + "\n")


def _json_text(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def _train_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates: dict = {}
    if args.seed is not None:
        updates["seed"] = int(args.seed)
    if args.iterations is not None:
        updates["iterations"] = int(args.iterations)
    if getattr(args, "no_mi", False):
        updates["mi_weight"] = 0.0
    if getattr(args, "rho", None) is not None:
        updates["rho"] = float(args.rho)
    if not updates:
        return cfg
    train = dataclasses.replace(cfg.train, **updates)
    return dataclasses.replace(cfg, train=train, seed=train.seed)


def _append_log(path: Path, log: list[dict]) -> None:
    def fmt(v) -> str:
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    with open(path, "a") as fh:
        for entry in log:
            fh.write(" ".join(f"{k}={fmt(v)}" for k, v in entry.items()) + "\n")


# --------------------------------------------------------------------- verbs
def cmd_train_base(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if cfg.stage != "base":
        raise ConfigError(f"train-base needs a base-stage config, got stage {cfg.stage!r}")
    cfg = _train_overrides(cfg, args)
    spec, _, partition = load_character(cfg)
    clips = resolve_clips(cfg)
    task = None
    task_weight = 0.5
    if cfg.task is not None:
        task = make_task(cfg.task.name, spec, cfg.train.num_envs, **cfg.task.params)
        task_weight = cfg.task.weight
    trainer = BaseTrainer(
        spec, partition, clips, cfg.train,
        task=task, task_weight=task_weight, env_config=cfg.env,
    )
    log = trainer.train(progress=args.progress)
    path = trainer.save(Path(args.out or cfg.out_dir))
    _append_log(path / "train.log", log)
    print(path)
    return 0


def cmd_train_residual(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if cfg.stage != args.kind:
        raise ConfigError(
            f"train-residual {args.kind} needs a {args.kind}-stage config, got {cfg.stage!r}"
        )
    cfg = _train_overrides(cfg, args)
    if args.kind == "compose":
        section = cfg.compose
        base = args.base or section.base_ckpt
        trainer = CompositionTrainer(
            base,
            _single_clip(section.clip_a, cfg, "compose.clip_a"),
            _single_clip(section.clip_b, cfg, "compose.clip_b"),
            cfg.train,
            subsets=section.subsets,
            env_config=cfg.env,
        )
    else:
        section = cfg.track
        base = args.base or section.base_ckpt
        trainer = TrackingTrainer(
            base,
            resolve_clips(cfg),
            section.commands,
            cfg.train,
            phi_k_mode=section.phi_k_mode,
            track_weight=section.track_weight,
            goal_refresh_every=section.goal_refresh_every,
            goal_buffer_size=section.goal_buffer_size,
            low_reward_window=section.low_reward_window,
            low_reward_threshold=section.low_reward_threshold,
            env_config=cfg.env,
        )
    log = trainer.train(progress=args.progress)
    path = trainer.save(Path(args.out or cfg.out_dir), parent=str(base))
    _append_log(path / "train.log", log)
    print(path)
    return 0


def cmd_eval_entropy(args: argparse.Namespace) -> int:
    handle = load_stage_policy(args.ckpt)
    clips = _ref_clips(args)
    masks = _parse_mask_list(args.masks, handle.partition)
    report = entropy_eval(handle, clips, masks, _settings(args))
    text = _json_text(report) if args.json else format_entropy_report(report)
    _emit(text, args.out)
    return 0


def cmd_eval_task(args: argparse.Namespace) -> int:
    handle = load_stage_policy(args.ckpt)
    clips = _ref_clips(args)
    report = task_eval(handle, clips, args.task, _settings(args), params=_parse_params(args.param))
    if args.json:
        text = _json_text(report)
    else:
        text = "\n".join([
            f"task: {report['task']}",
            f"episodes: {len(report['success'])}",
            f"success_rate: {report['success_rate']:.3f}",
            f"reward_mean: {report['reward_mean']:.4f}",
            "success: " + " ".join(str(int(s)) for s in report["success"]),
        ])
    _emit(text, args.out)
    return 0


def cmd_eval_tracking(args: argparse.Namespace) -> int:
    handle = load_stage_policy(args.ckpt)
    clips = _ref_clips(args)
    report = tracking_eval(handle, clips, args.command, _settings(args),
                           zero_residual=args.zero_residual)
    if args.json:
        text = _json_text(report)
    else:
        text = "\n".join([
            f"command: {report['command']}",
            f"zero_residual: {str(report['zero_residual']).lower()}",
            f"track_reward_mean: {report['track_reward_mean']:.4f}",
            f"tracking_error_m: {report['tracking_error_m']:.4f}",
        ])
    _emit(text, args.out)
    return 0


def cmd_ablation_grid(args: argparse.Namespace) -> int:
    cells = _parse_cells(args.cell)
    clips = _ref_clips(args)
    report = run_ablation_grid(cells, clips, _settings(args))
    _emit(format_ablation_table(report), args.out)
    return 0


def cmd_consistency_matrix(args: argparse.Namespace) -> int:
    clips = _ref_clips(args)
    report = run_consistency_matrix(args.ckpt, clips, _settings(args))
    _emit(format_consistency_table(report), args.out)
    return 0


def cmd_rollout(args: argparse.Namespace) -> int:
    handle = load_stage_policy(args.ckpt)
    clips = _ref_clips(args)
    settings = EvalSettings(episodes=1, steps=args.steps, init=args.init, seed=args.seed)
    clip = record_rollout(handle, clips, _parse_mask_entry(args.mask), settings,
                          command=args.command)
    save_clip(clip, args.record)
    print(f"{args.record}: {len(clip)} frames at {clip.fps:g} fps")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import LiveSession, load_session, serve_live

    if args.demo:
        session = LiveSession.demo(seed=args.seed)
    else:
        if args.ckpt is None:
            raise ConfigError("serve needs --ckpt or --demo")
        session = load_session(
            args.ckpt,
            _ref_clips(args),
            seed=args.seed,
            task_name=args.task,
            task_params=_parse_params(args.task_param),
        )
    print(f"serving on ws://{args.host}:{args.port}/ws", file=sys.stderr)
    serve_live(session, host=args.host, port=args.port, frame_hz=args.frame_hz)
    return 0


# -------------------------------------------------------------------- parser
def _add_ref_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ref", nargs="+", default=["synth"], metavar="CLIP",
                   help="reference clips: 'synth', 'synth:<name>', or clip file paths")
    p.add_argument("--synth-frames", type=int, default=90,
                   help="frames per synthetic clip")


def _add_eval_flags(p: argparse.ArgumentParser, episodes: int = 8, steps: int = 90,
                    init: bool = True) -> None:
    p.add_argument("--episodes", type=int, default=episodes, help="rollout episodes")
    p.add_argument("--steps", type=int, default=steps, help="steps per episode")
    if init:
        p.add_argument("--init", choices=INIT_MODES, default="random",
                       help="episode starts: sampled reference frames or one fixed frame")
    p.add_argument("--seed", type=int, default=0, help="evaluation seed")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config file (YAML)")
    p.add_argument("--out", default=None, help="checkpoint directory (default: config out_dir)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--iterations", type=int, default=None,
                   help="override the configured iteration count")
    p.add_argument("--progress", action="store_true", help="print per-iteration progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskmotion",
        description="Train, evaluate, and serve masked motion-control policies.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    p = sub.add_parser("train-base", help="train the stage-one masked policy")
    _add_train_flags(p)
    p.add_argument("--no-mi", action="store_true", help="drop the mask-invariance loss")
    p.add_argument("--rho", type=float, default=None, help="override the masking rate")
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("train-residual", help="train a residual stage on a frozen base")
    p.add_argument("kind", choices=("compose", "track"), help="residual stage kind")
    _add_train_flags(p)
    p.add_argument("--base", default=None, help="override the config base checkpoint")
    p.set_defaults(func=cmd_train_residual)

    p = sub.add_parser("eval-entropy", help="masked-rollout visitation entropy report")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    _add_ref_flags(p)
    p.add_argument("--masks", default="all",
                   help="'all' or comma-separated entries like 'null,LeftArm,LeftArm+RightArm'")
    _add_eval_flags(p)
    p.add_argument("--epsilon", type=float, default=None, help="visitation cell size")
    p.add_argument("--out", default=None, help="also write the report to this file")
    p.add_argument("--json", action="store_true", help="emit JSON instead of the table")
    p.set_defaults(func=cmd_eval_entropy)

    p = sub.add_parser("eval-task", help="goal-task success rate for a base checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--task", required=True, choices=("location", "strike", "heading"),
                   help="goal task to evaluate")
    _add_ref_flags(p)
    _add_eval_flags(p)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="task parameter override (repeatable)")
    p.add_argument("--out", default=None, help="also write the report to this file")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.set_defaults(func=cmd_eval_task)

    p = sub.add_parser("eval-tracking", help="command-tracking reward and pose error")
    p.add_argument("--ckpt", required=True, help="tracking checkpoint directory")
    p.add_argument("--command", required=True, help="scripted command name")
    _add_ref_flags(p)
    _add_eval_flags(p)
    p.add_argument("--zero-residual", action="store_true",
                   help="evaluate the frozen base without the residual")
    p.add_argument("--out", default=None, help="also write the report to this file")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.set_defaults(func=cmd_eval_tracking)

    p = sub.add_parser("ablation-grid", help="entropy grid over mask-invariance weights")
    p.add_argument("--cell", action="append", required=True, metavar="WEIGHT=DIR[,DIR...]",
                   help="checkpoints trained at one mi weight (repeatable)")
    _add_ref_flags(p)
    _add_eval_flags(p, init=False)
    p.add_argument("--epsilon", type=float, default=None, help="visitation cell size")
    p.add_argument("--out", default=None, help="also write the table to this file")
    p.set_defaults(func=cmd_ablation_grid)

    p = sub.add_parser("consistency-matrix", help="per-mask entropy matrix for one checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    _add_ref_flags(p)
    _add_eval_flags(p)
    p.add_argument("--epsilon", type=float, default=None, help="visitation cell size")
    p.add_argument("--out", default=None, help="also write the table to this file")
    p.set_defaults(func=cmd_consistency_matrix)

    p = sub.add_parser("rollout", help="record one deterministic rollout as a clip file")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--record", required=True, metavar="CLIPFILE", help="output clip path")
    _add_ref_flags(p)
    p.add_argument("--mask", default="null",
                   help="mask parts like 'LeftArm+RightArm' (tracking checkpoints fix their own)")
    p.add_argument("--command", default=None,
                   help="scripted command for tracking checkpoints (default: first trained)")
    p.add_argument("--steps", type=int, default=90, help="steps to roll")
    p.add_argument("--init", choices=INIT_MODES, default="random",
                   help="episode start: sampled reference frame or one fixed frame")
    p.add_argument("--seed", type=int, default=0, help="rollout seed")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("serve", help="stream live rollouts over WebSocket")
    p.add_argument("--ckpt", default=None, help="checkpoint directory")
    p.add_argument("--demo", action="store_true",
                   help="serve an untrained policy (no checkpoint needed)")
    _add_ref_flags(p)
    p.add_argument("--task", default=None, help="goal task for task-trained checkpoints")
    p.add_argument("--task-param", action="append", default=[], metavar="KEY=VALUE",
                   help="task parameter (repeatable)")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8765, help="bind port")
    p.add_argument("--frame-hz", type=float, default=None,
                   help="stream rate (default: env control rate)")
    p.add_argument("--seed", type=int, default=0, help="session seed")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as e:
        detail = e.args[0] if e.args else e
        print(f"error: {detail}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
