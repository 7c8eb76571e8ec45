"""
Exception hierarchy shared by every module of the package.
"""
from __future__ import annotations

from typing import Any


class DppsError(Exception):
    """Base error of the package."""


class InvalidRangeError(DppsError, ValueError):
    pass


class ShapeMismatchError(DppsError, ValueError):
    pass


class CovarianceError(DppsError, ValueError):
    pass


class UnsupportedCapabilityError(DppsError, NotImplementedError):
    pass


class CapExceededError(DppsError, ValueError):
    pass


class SingularSystemError(DppsError, ValueError):
    pass


class ImageFormatError(DppsError, ValueError):
    pass


class OutputWriteError(DppsError, OSError):
    pass


class ConfigError(DppsError, ValueError):
    """Invalid run configuration. `field` carries the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonFiniteStateError(DppsError, RuntimeError):
    """The reverse chain produced NaN/Inf. Carries the timestep and a diagnostics payload."""

    def __init__(self, timestep: int, diagnostics: dict[str, Any]):
        super().__init__(f"Estado não finito no timestep t={timestep}: {diagnostics}")
        self.timestep = timestep
        self.diagnostics = diagnostics
