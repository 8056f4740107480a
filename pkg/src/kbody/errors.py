"""Error taxonomy shared by all modules.

Every failure mode raised by this package derives from :class:`KBodyError`
so callers (and the CLI) can map computational failures to a structured
error record uniformly.
"""

__all__ = [
    "KBodyError",
    "DimensionMismatch",
    "ZeroVector",
    "NotUnit",
    "UnsupportedDimension",
    "SingularOperator",
    "DictionaryTooSmall",
    "NoNegativeRegion",
    "NonStarBody",
    "ConvexityLost",
    "StepTooSmall",
    "HypothesisViolated",
    "NotCertified",
    "BadExponent",
    "BadSubspace",
    "InvalidSpec",
]


class KBodyError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(KBodyError, ValueError):
    """Operands live in different ambient spaces or have wrong lengths."""


class ZeroVector(KBodyError, ValueError):
    """A nonzero vector was required."""


class NotUnit(KBodyError, ValueError):
    """A unit vector was required."""


class UnsupportedDimension(KBodyError, ValueError):
    """The requested operation is not available in this dimension.

    Raised both for plain size limits (for example product quadrature in
    high dimension) and for directions with block size >= 3 whose
    rotation orbit does not span a stable subspace of the block size;
    only directions with parallel blocks admit one in that regime.
    """


class SingularOperator(KBodyError, ArithmeticError):
    """The discretized transform is numerically singular even after
    regularization."""


class DictionaryTooSmall(KBodyError, ValueError):
    """The atom dictionary cannot represent the target even without the
    non-negativity constraint."""


class NoNegativeRegion(KBodyError, ValueError):
    """The positivity diagnostic found no negative region to perturb
    against; the input body is numerically positive definite."""


class NonStarBody(KBodyError, ValueError):
    """A radial power profile became non-positive; the perturbation does
    not define a star body."""


class ConvexityLost(KBodyError, ValueError):
    """A perturbed body failed the sampled convexity check."""


class StepTooSmall(KBodyError, ArithmeticError):
    """Finite-difference noise dominates the requested derivative."""


class HypothesisViolated(KBodyError, ValueError):
    """A sampled hypothesis of an inequality failed; carries a witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NotCertified(KBodyError, ValueError):
    """An operation required a positive membership certificate."""


class BadExponent(KBodyError, ValueError):
    """Exponent outside the admissible range."""


class BadSubspace(KBodyError, ValueError):
    """A subspace failed a rank or invariance requirement."""


class InvalidSpec(KBodyError, ValueError):
    """A body or run specification could not be parsed.

    ``path`` points at the offending JSON location.
    """

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path
