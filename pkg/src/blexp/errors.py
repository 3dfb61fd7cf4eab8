"""Exception hierarchy shared by all solver modules."""


class BlexpError(Exception):
    """Base class for all package errors."""


class StencilError(BlexpError):
    """Grid too coarse for the requested finite-difference stencil."""


class InvariantError(BlexpError):
    """A documented structural invariant failed on constructed data."""


class SolverError(BlexpError):
    """A linear or nonlinear solve failed (singular matrix, no bracket, ...)."""


class NonContractionError(SolverError):
    """An iteration diverged; carries the measured update ratios."""

    def __init__(self, message, ratios=None):
        super().__init__(message)
        self.ratios = list(ratios) if ratios is not None else []


class ExtrapolationError(BlexpError):
    """Requested evaluation outside the sampled range of a profile."""


class DependencyError(BlexpError):
    """A lower-order layer required by a forcing evaluation is missing."""


class TruncationError(BlexpError):
    """Domain does not reach far enough for the requested construction."""


class ResolutionError(BlexpError):
    """Spectral or grid resolution insufficient for the requested tolerance."""
