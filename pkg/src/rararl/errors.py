"""Exceptions shared across the lab."""

from typing import List, Optional


class RararlError(Exception):
    """Base class for all lab errors."""


class ShapeError(RararlError, ValueError):
    """Array or vector dimensions do not match what the operation expects."""


class CacheError(RararlError, ValueError):
    """A forward cache was produced by another network or a stale version."""


class NumericError(RararlError, ArithmeticError):
    """A non-finite value showed up in inputs, gradients or targets."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"{message} (layer {layer_index})"
        super().__init__(message)
        self.layer_index = layer_index


class EnvUsageError(RararlError, RuntimeError):
    """The simulator was driven out of protocol (e.g. stepping after done)."""


class SequencingError(RararlError, ValueError):
    """An n-step window does not follow the role order it claims."""


class ConfigError(RararlError, ValueError):
    """Invalid or conflicting configuration."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        if self.diagnostics:
            message = message + "\n" + "\n".join(f"  {d}" for d in self.diagnostics)
        super().__init__(message)


class CheckpointError(RararlError, ValueError):
    """A checkpoint file is corrupt, truncated, versioned wrongly or incomplete."""
