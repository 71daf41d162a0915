"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class AffinvarError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(AffinvarError):
    pass


class NotSymmetricError(AffinvarError):
    pass


class ParseError(AffinvarError):
    """Model file could not be parsed against the JSON schema."""


class NotNonnegativeError(AffinvarError):
    """A functional takes negative values on the polyhedron.

    Carries a witness point where the functional is negative.
    """

    def __init__(self, message: str, witness: np.ndarray | None = None,
                 value: float | None = None):
        super().__init__(message)
        self.witness = witness
        self.value = value


class NotNonnegativeOnFacetError(NotNonnegativeError):
    def __init__(self, message: str, facet: int,
                 witness: np.ndarray | None = None, value: float | None = None):
        super().__init__(message, witness=witness, value=value)
        self.facet = facet


class InteriorEmptyError(AffinvarError):
    """The polyhedron has no interior point.

    For facet-multiple detection this covers the degenerate branch where the
    whole set collapses onto one facet and the multiplier would be arbitrary.
    """


class NotAdmissibleError(AffinvarError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class RankDeficiencyError(AffinvarError):
    pass


class ModelInconsistencyError(AffinvarError):
    """The state space is not contained in the PSD region of the diffusion."""


class NotRepresentableError(AffinvarError):
    """No PSD facet decomposition exists; carries the infeasibility diagnostic."""

    def __init__(self, message: str, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class NumericalFailureError(AffinvarError):
    """Search was inconclusive; not a proof of nonexistence."""


class NotInSpanError(AffinvarError):
    pass


class NotNormalizedError(AffinvarError):
    pass


class PsdConditionFailedError(AffinvarError):
    pass


class NegativeCError(AffinvarError):
    pass


class PhiVMismatchError(AffinvarError):
    pass


class PreconditionFailedError(AffinvarError):
    pass


class ZeroQuadraticPartError(AffinvarError):
    pass


class NotAdmissibleQuadricError(AffinvarError):
    """Quadric is not affinely equivalent to one of the three canonical forms."""


class SigmaMismatchError(AffinvarError):
    pass


class ToleranceWarning(UserWarning):
    """An LP box bound or tolerance was active; result may be conservative."""
