"""Runnable experiment recipes on top of the evaluation layer: the
mask-invariance ablation grid, the per-mask consistency matrix, residual
composition locality, and tracking sanity checks.  All of them consume
existing checkpoints; training happens through the CLI."""

from __future__ import annotations

import dataclasses
import itertools
from pathlib import Path

import numpy as np

from .character import MotionClip
from .errors import CheckpointError, ConfigError
from .evaluate import (
    EvalSettings,
    PolicyHandle,
    entropy_eval,
    load_stage_policy,
    mask_label,
    rollout_states,
    tracking_eval,
)
from .kinematics import clip_states
from .masking import BodyPartition
from .metrics import nearest_reference_distance, part_joints, rotation_features


def single_part_masks(partition: BodyPartition) -> list[tuple[str, ...]]:
    return [(name,) for name in partition.names]


def pair_masks(partition: BodyPartition) -> list[tuple[str, ...]]:
    return [tuple(c) for c in itertools.combinations(partition.names, 2)]


def standard_masks(partition: BodyPartition) -> list[tuple[str, ...]]:
    """Every 1- and 2-part mask: N + C(N,2) configurations."""
    return single_part_masks(partition) + pair_masks(partition)


def _handle(ckpt) -> PolicyHandle:
    return ckpt if isinstance(ckpt, PolicyHandle) else load_stage_policy(ckpt)


# ------------------------------------------------------------- ablation grid
def run_ablation_grid(
    cells: dict[float, list], clips: list[MotionClip], settings: EvalSettings
) -> dict:
    """Average masked-rollout entropy per MI weight.

    cells maps mi_weight -> checkpoint dirs (one per seed).  Each row
    averages H_norm over every 1- and 2-part mask and over the seeds that
    loaded, under both random and fixed initial states.  Checkpoints that
    fail to load are listed and excluded."""
    rows = []
    labels: list[str] = []
    for weight in sorted(cells):
        collected = {"random": [], "same": []}
        missing: list[str] = []
        for path in cells[weight]:
            try:
                handle = _handle(path)
            except CheckpointError as e:
                missing.append(f"{path}: {e}")
                continue
            masks = standard_masks(handle.partition)
            if not labels:
                labels = [mask_label(handle.partition, m) for m in masks]
            for init in ("random", "same"):
                rep = entropy_eval(
                    handle, clips, masks, dataclasses.replace(settings, init=init)
                )
                collected[init].append(
                    float(np.mean([m["h_norm"] for m in rep["masks"].values()]))
                )
        rows.append({
            "mi_weight": float(weight),
            "h_norm_random": float(np.mean(collected["random"])) if collected["random"] else None,
            "h_norm_same": float(np.mean(collected["same"])) if collected["same"] else None,
            "seeds": len(collected["random"]),
            "missing": missing,
        })
    return {"rows": rows, "masks": labels}


def format_ablation_table(report: dict) -> str:
    lines = [
        f"{'mi_weight':>10}  {'H_norm (random init)':>22}  {'H_norm (fixed init)':>21}  seeds",
        "-" * 66,
    ]
    for row in report["rows"]:
        rnd = "absent" if row["h_norm_random"] is None else f"{row['h_norm_random']:.4f}"
        same = "absent" if row["h_norm_same"] is None else f"{row['h_norm_same']:.4f}"
        lines.append(
            f"{row['mi_weight']:>10.3g}  {rnd:>22}  {same:>21}  {row['seeds']:>5}"
        )
    missing = [m for row in report["rows"] for m in row["missing"]]
    if missing:
        lines.append("missing checkpoints:")
        lines.extend(f"  {m}" for m in missing)
    return "\n".join(lines)


# ------------------------------------------------------- consistency matrix
def run_consistency_matrix(
    ckpt, clips: list[MotionClip], settings: EvalSettings
) -> dict:
    """Upper-triangular H_norm matrix over every 1- and 2-part mask:
    diagonal = single parts, off-diagonal = pairs, plus the max-min spread."""
    handle = _handle(ckpt)
    names = list(handle.partition.names)
    N = len(names)
    masks = standard_masks(handle.partition)
    rep = entropy_eval(handle, clips, masks, settings)

    matrix: list[list[float | None]] = [[None] * N for _ in range(N)]
    for i in range(N):
        matrix[i][i] = rep["masks"][mask_label(handle.partition, (names[i],))]["h_norm"]
        for j in range(i + 1, N):
            label = mask_label(handle.partition, (names[i], names[j]))
            matrix[i][j] = rep["masks"][label]["h_norm"]
    cells = [v for row in matrix for v in row if v is not None]
    return {
        "names": names,
        "matrix": matrix,
        "cells": len(cells),
        "spread": float(max(cells) - min(cells)),
        "epsilon": rep["epsilon"],
        "init": settings.init,
    }


def format_consistency_table(report: dict) -> str:
    names = report["names"]
    width = max(8, max(len(n) for n in names) + 1)
    header = " " * width + "".join(f"{n:>{width}}" for n in names)
    lines = [header]
    for name, row in zip(names, report["matrix"]):
        cells = "".join(
            f"{'':>{width}}" if v is None else f"{v:>{width}.4f}" for v in row
        )
        lines.append(f"{name:>{width}}" + cells)
    lines.append(f"spread (max-min over {report['cells']} cells): {report['spread']:.4f}")
    return "\n".join(lines)


def format_entropy_report(report: dict) -> str:
    lines = [
        f"epsilon: {report['epsilon']:.6g}   init: {report['init']}   "
        f"episodes: {report['episodes']}   steps: {report['steps']}",
        f"{'mask':<28}  {'H_norm':>8}  {'visited':>8}  {'frames':>8}",
        "-" * 58,
    ]
    for label, entry in report["masks"].items():
        lines.append(
            f"{label:<28}  {entry['h_norm']:>8.4f}  {entry['visited']:>8}"
            f"  {entry['frames']:>8}"
        )
    return "\n".join(lines)


# ------------------------------------------------------ composition locality
def _ratio(base: float, delta: float) -> float:
    return float(delta / base) if base > 0 else 0.0


def composition_locality(
    ckpt,
    carrier: MotionClip,
    overlay: MotionClip,
    settings: EvalSettings,
    parts: tuple[str, ...] | None = None,
) -> dict:
    """How far the trained residual moved each region, versus the frozen base:
    adapted-part features are measured against the overlay motion, complement
    features against the carrier."""
    handle = _handle(ckpt)
    if handle.stage != "compose":
        raise ConfigError("composition locality needs a compose-stage checkpoint")
    partition = handle.partition
    if parts is None:
        parts = tuple(handle.manifest["subsets"][0])
    adapted = part_joints(partition, parts)
    complement = tuple(
        j for j in range(handle.spec.num_joints) if j not in adapted
    )
    layout = handle.layout

    clips = [carrier]
    base_states = np.concatenate(
        rollout_states(handle, clips, parts, settings, zero_residual=True), axis=0
    )
    trained_states = np.concatenate(
        rollout_states(handle, clips, parts, settings), axis=0
    )
    overlay_feats = rotation_features(clip_states(overlay), layout, adapted)
    carrier_feats = rotation_features(clip_states(carrier), layout, complement)

    d_base_adapted = nearest_reference_distance(
        rotation_features(base_states, layout, adapted), overlay_feats
    )
    d_trained_adapted = nearest_reference_distance(
        rotation_features(trained_states, layout, adapted), overlay_feats
    )
    d_base_comp = nearest_reference_distance(
        rotation_features(base_states, layout, complement), carrier_feats
    )
    d_trained_comp = nearest_reference_distance(
        rotation_features(trained_states, layout, complement), carrier_feats
    )
    return {
        "parts": list(parts),
        "adapted_distance_base": d_base_adapted,
        "adapted_distance_trained": d_trained_adapted,
        "adapted_decrease": _ratio(d_base_adapted, d_base_adapted - d_trained_adapted),
        "complement_distance_base": d_base_comp,
        "complement_distance_trained": d_trained_comp,
        "complement_increase": _ratio(d_base_comp, d_trained_comp - d_base_comp),
    }


# ---------------------------------------------------------- tracking sanity
def tracking_sanity(
    ckpt,
    clips: list[MotionClip],
    settings: EvalSettings,
    rest_command: str = "rest",
    move_command: str = "raise_arms",
) -> dict:
    """Hold-still reward plus the moving command's error against the
    zero-residual baseline."""
    handle = _handle(ckpt)
    rest = tracking_eval(handle, clips, rest_command, settings)
    moved = tracking_eval(handle, clips, move_command, settings)
    baseline = tracking_eval(handle, clips, move_command, settings, zero_residual=True)
    reduction = _ratio(
        baseline["tracking_error_m"],
        baseline["tracking_error_m"] - moved["tracking_error_m"],
    )
    return {
        "rest_reward": rest["track_reward_mean"],
        "move_command": move_command,
        "move_error": moved["tracking_error_m"],
        "baseline_error": baseline["tracking_error_m"],
        "error_reduction": reduction,
    }
