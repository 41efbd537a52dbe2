"""Exception and warning types shared across the package."""

from __future__ import annotations


class StopflowError(Exception):
    """Base class for all package errors."""


class MalformedSegments(StopflowError):
    """Piecewise coefficient segments do not tile an interval, or a term is invalid."""


class SigmaNonPositive(StopflowError):
    """The diffusion coefficient is not strictly positive somewhere on the state interval."""


class DegenerateSign(StopflowError):
    """The running payoff is one-signed almost everywhere, so stopping is trivial."""


class IllPosedGbm(StopflowError):
    """Geometric Brownian motion parameters whose characteristic roots are complex or
    repeated; such problems are either trivial or have an infinite value."""

    def __init__(self, case, message: str):
        super().__init__(message)
        self.case = case


class OutOfRange(StopflowError):
    """Argument outside the tiled coefficient range or the state interval."""


class OutOfWindow(StopflowError):
    """Evaluation point outside a curve's working window."""


class IntegratorFailure(StopflowError):
    """The adaptive ODE integrator could not complete a step."""


class NonPositiveState(StopflowError):
    """Closed-form fundamental matrix requested at a non-positive state."""


class NonPositivePhi12(StopflowError):
    """phi12(a, b) <= 0 was encountered where positivity is required; signals an
    ill-posed problem slipping past validation."""


class TruncationNotConverged(StopflowError):
    """The expanding-truncation iteration did not settle a domain-edge boundary."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = tuple(history or ())


class OverlappingIntervals(StopflowError):
    """Maximal intervals passed to assembly overlap or are unsorted."""


class NonFiniteSample(StopflowError):
    """A simulated path produced a non-finite state or payoff accumulator."""

    def __init__(self, message: str, path_index: int | None = None):
        super().__init__(message)
        self.path_index = path_index


class DegenerateOrdering(StopflowError):
    """Hitting probability requested with endpoints out of order."""


class ConfigError(StopflowError):
    """Problem configuration file is malformed; message carries a JSON-pointer path."""


class ScanTooCoarse(UserWarning):
    """Anchor-grid scan could not separate adjacent boundary transitions."""


class DegenerateRoot(UserWarning):
    """Two boundary roots were closer than the merge resolution and were reported once."""
