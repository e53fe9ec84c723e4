"""Checkpoint directories: manifest.json + params.npz + optional train_state.pt.

A checkpoint directory is immutable once written: saving into a non-empty
directory is an error, and resuming writes a fresh directory that records its
parent. params.npz holds every module state_dict entry as a numpy array under
"<module>.<key>"; train_state.pt carries optimizer/RNG/env state for exact
resume.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.npz"
TRAIN_STATE_NAME = "train_state.pt"


def save_checkpoint(
    out_dir: str | Path,
    manifest: dict,
    modules: dict[str, nn.Module],
    train_state: dict | None = None,
) -> Path:
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise CheckpointError(f"checkpoint directory {out_dir} already exists and is not empty")
    out_dir.mkdir(parents=True, exist_ok=True)

    arrays: dict[str, np.ndarray] = {}
    for mod_name, module in modules.items():
        for key, tensor in module.state_dict().items():
            arrays[f"{mod_name}.{key}"] = tensor.detach().cpu().numpy()
    np.savez(out_dir / PARAMS_NAME, **arrays)

    doc = dict(manifest)
    doc["format_version"] = FORMAT_VERSION
    doc["modules"] = sorted(modules)
    (out_dir / MANIFEST_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True))

    if train_state is not None:
        torch.save(train_state, out_dir / TRAIN_STATE_NAME)
    return out_dir


def load_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / MANIFEST_NAME
    if not path.exists():
        raise CheckpointError(f"{ckpt_dir}: not a checkpoint (missing {MANIFEST_NAME})")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: invalid JSON: {e.msg}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{ckpt_dir}: unsupported checkpoint format {version!r} (expected {FORMAT_VERSION})"
        )
    return manifest


def load_params_into(ckpt_dir: str | Path, modules: dict[str, nn.Module]) -> None:
    """Load saved arrays into freshly constructed modules, validating every
    key and shape against the checkpoint."""
    path = Path(ckpt_dir) / PARAMS_NAME
    if not path.exists():
        raise CheckpointError(f"{ckpt_dir}: missing {PARAMS_NAME}")
    with np.load(path) as arrays:
        stored = {k: arrays[k] for k in arrays.files}
    for mod_name, module in modules.items():
        state = module.state_dict()
        new_state = {}
        for key, tensor in state.items():
            full = f"{mod_name}.{key}"
            if full not in stored:
                raise CheckpointError(f"{ckpt_dir}: missing parameter {full}")
            arr = stored.pop(full)
            if tuple(arr.shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"{ckpt_dir}: parameter {full} has shape {arr.shape}, "
                    f"model expects {tuple(tensor.shape)}"
                )
            new_state[key] = torch.as_tensor(arr, dtype=tensor.dtype)
        module.load_state_dict(new_state)
    leftovers = [k for k in stored if k.split(".", 1)[0] in modules]
    if leftovers:
        raise CheckpointError(f"{ckpt_dir}: unexpected parameters {sorted(leftovers)[:4]}")


def load_train_state(ckpt_dir: str | Path) -> dict | None:
    path = Path(ckpt_dir) / TRAIN_STATE_NAME
    if not path.exists():
        return None
    # trusted local artifact: optimizer/env state needs full unpickling
    return torch.load(path, weights_only=False)


def params_digest(modules: dict[str, nn.Module]) -> str:
    """Order-stable hash of all parameters/buffers, for frozen-base assertions."""
    import hashlib

    h = hashlib.sha256()
    for mod_name in sorted(modules):
        for key, tensor in sorted(modules[mod_name].state_dict().items()):
            h.update(mod_name.encode())
            h.update(key.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
