"""Shared exception types."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Raised when an array argument fails a shape, finiteness, or value check."""


class InvalidPartitionError(ValueError):
    """Raised when a body partition does not cover the skeleton exactly once."""


class IncompatibleClipsError(ValueError):
    """Raised when an operation needs clips sharing a skeleton/fps and they do not."""


class ClipFormatError(ValueError):
    """Raised on malformed clip files; message carries path and field."""


class ConfigError(ValueError):
    """Raised on unknown keys, missing keys, or out-of-range config values."""


class CheckpointError(ValueError):
    """Raised on malformed checkpoints or dimension mismatches while loading."""


class CommandNotFoundError(KeyError):
    """Raised when a goal command has no entry in the preset table."""
