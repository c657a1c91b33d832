"""Exception types shared across the package.

Input-shaped problems derive from ValueError, runtime/processing failures
from RuntimeError.  Lookups of unknown object or session ids raise plain
KeyError.
"""

from __future__ import annotations


class DimensionError(ValueError):
    """Raster or grid dimensions violate a structural constraint (e.g. W != 2H)."""


class CoordinateRangeError(ValueError):
    """A coordinate lies outside its documented domain."""


class DegenerateInputError(ValueError):
    """An input is degenerate (zero direction vector, empty range, ...)."""


class ParameterError(ValueError):
    """A scalar parameter is out of its valid range."""


class SceneError(ValueError):
    """A scene description is invalid (overlaps, bad colors, duplicate ids)."""


class ConfigError(ValueError):
    """A configuration value is invalid or would produce an absurd workload."""


class DecodeError(RuntimeError):
    """A raster file could not be decoded."""


class DetectionError(RuntimeError):
    """A detector could not find the requested structure in an image."""


class ConsistencyError(RuntimeError):
    """Two views that must agree do not."""


class GenerationError(RuntimeError):
    """A world model returned malformed output."""


class RolloutError(RuntimeError):
    """A rollout aborted; carries the partial session and the original cause."""

    def __init__(self, message: str, session=None, cause: Exception | None = None):
        super().__init__(message)
        self.session = session
        self.cause = cause
