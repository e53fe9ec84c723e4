"""Mask-conditioned physics-based motion control.

Stage one trains a base policy that imitates reference motion while body-part
groups of its observation are stochastically blanked; residual stages adapt
the frozen base for motion composition and partial-body goal tracking.
"""

__version__ = "0.1.0"

from .character import CharacterSpec, MotionClip, Pose, load_clip, save_clip
from .masking import BodyPartition, Mask, apply_mask, build_index_map, sample_mask

__all__ = [
    "CharacterSpec",
    "MotionClip",
    "Pose",
    "load_clip",
    "save_clip",
    "BodyPartition",
    "Mask",
    "apply_mask",
    "build_index_map",
    "sample_mask",
    "__version__",
]
