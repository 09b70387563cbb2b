"""Exception hierarchy shared by all solver modules.

``ConfigError`` marks bad user input (CLI exit code 2); everything derived
from ``SolverError`` marks a numerical failure or a detected violation of a
mathematical precondition (CLI exit code 3).
"""

from __future__ import annotations

__all__ = [
    "BlowupLabError",
    "ConfigError",
    "SolverError",
    "NonFinite",
    "InconclusiveTail",
    "KOViolation",
    "NoBlowup",
    "StepUnderflow",
    "BracketFailure",
    "BoundsNeverHold",
    "NotMonotone",
    "VCollapse",
    "NoOverlap",
    "NewtonDiverged",
    "MonotonicityViolation",
    "SupercriticalP",
    "WindowViolation",
    "IterationStall",
]


class BlowupLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BlowupLabError):
    """Invalid configuration: unknown keys, malformed values, bad ranges."""


class SolverError(BlowupLabError):
    """Base class for numerical failures and violated math preconditions."""


class NonFinite(SolverError):
    """A nonlinearity evaluation returned NaN or infinity on the scan range."""


class InconclusiveTail(SolverError):
    """The automatic doubling-ratio tail test could not certify the improper
    integral of a custom-growth nonlinearity either way."""


class KOViolation(SolverError):
    """An operation requiring the Keller-Osserman condition was invoked with a
    nonlinearity whose tail integral diverges."""


class NoBlowup(SolverError):
    """The shooting trajectory stays bounded: tail condition fails or the
    center value is too small to escape a potential well."""


class StepUnderflow(SolverError):
    """The adaptive integrator collapsed its step size before reaching a
    switch point or the target height."""


class BracketFailure(SolverError):
    """No center-value bracket with blow-up radii on both sides of the target
    could be found inside the scan range."""


class BoundsNeverHold(SolverError):
    """No suffix of the profile satisfies the gradient sandwich bounds, or
    the profile is too short for the asymptotic regime."""


class NotMonotone(SolverError):
    """A profile has no strictly increasing tail to invert."""


class VCollapse(SolverError):
    """The gradient variable hit zero during downward integration: the
    requested bottom height lies below the solution's minimum."""


class NoOverlap(SolverError):
    """Two inverse profiles share no common height range."""


class NewtonDiverged(SolverError):
    """Damped Newton iteration failed to converge.

    The ``trace`` attribute records the residual norm per iteration.
    """

    def __init__(self, message: str, trace: list[float] | None = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class MonotonicityViolation(SolverError):
    """A solution family that must be pointwise nondecreasing is not."""


class SupercriticalP(SolverError):
    """The power exponent is at or above N/(N-2): no distinct singular
    solution family exists in dimension N >= 3."""


class WindowViolation(SolverError):
    """The power exponent lies outside the admissible window (p > 1)."""


class IterationStall(SolverError):
    """A monotone sweep iteration exceeded its sweep budget without meeting
    its Cauchy stopping rule."""
