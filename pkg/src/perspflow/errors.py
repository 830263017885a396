"""Exception types shared across the package."""

from __future__ import annotations


class PerspflowError(Exception):
    """Base class for all package-specific errors."""


class FlowFormatError(PerspflowError):
    """Malformed FLOWLOG input (bad header or record line)."""


class FlowOrderError(PerspflowError):
    """Frame indices in a FLOWLOG stream are not non-decreasing."""


class BoundsError(PerspflowError):
    """A motion vector lies outside the declared frame bounds."""


class InsufficientDataError(PerspflowError):
    """Too little valid data to form an estimate."""

    def __init__(self, message: str, valid_count: int = 0) -> None:
        super().__init__(message)
        self.valid_count = valid_count


class DegenerateSystemError(PerspflowError):
    """No vertical transition signal: every constraint coefficient is zero."""


class SolverDivergenceError(PerspflowError):
    """The solved inter-row scale factor is non-positive."""


class SolverConvergenceError(PerspflowError):
    """Iterative solver hit the iteration cap before converging."""

    def __init__(self, message: str, last_omega: float, iterations: int) -> None:
        super().__init__(message)
        self.last_omega = last_omega
        self.iterations = iterations


class BehindCameraError(PerspflowError):
    """Projection requested for a point at or behind the camera plane."""


class HorizonError(PerspflowError):
    """Image row does not back-project onto the visible ground plane."""


class SceneScriptError(PerspflowError):
    """Invalid or unparseable scene script."""
