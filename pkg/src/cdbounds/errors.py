"""Exception and warning types shared across the package."""


class MeshError(Exception):
    pass


class EmptyMarkSet(MeshError):
    """Refinement plan contains no marked cells."""


class UnsupportedDomain(Exception):
    """Domain is not an axis-aligned box."""


class IncomingFluxViolated(Exception):
    """Drift points outward on a boundary part that requires inflow."""


class SingularReaction(Exception):
    """Reaction coefficient is negative somewhere."""


class NonMatchingSpaces(Exception):
    """Trial and test spaces do not live on the same mesh/degree."""


class IndefiniteSystem(Exception):
    """A quadratic form that must be SPD failed a definiteness probe."""


class SingularMatrix(Exception):
    """Factorization hit a zero pivot."""

    def __init__(self, message, pivot_index=-1):
        super().__init__(message)
        self.pivot_index = pivot_index


class NoReference(Exception):
    """Error norms requested without an exact or reference solution."""


class ZeroMeanViolated(Exception):
    """Field violates the zero-mean constraint of its space."""


class SpaceNotRicher(Exception):
    """Auxiliary space does not strictly contain the primal space."""


class LambdaZeroWithMuOne(Exception):
    """Weight route requires strictly positive reaction but found none."""


class AllZeroIndicators(Exception):
    """Marking requested on an all-zero indicator vector."""


class StepCapExceeded(Exception):
    """Per-level iteration cap hit; partial records attached."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records if records is not None else []


class RegularityViolated(Warning):
    """Approximation lacks the smoothness the identity needs."""
