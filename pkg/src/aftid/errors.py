"""Exception and warning types shared across the package."""


class AftidError(Exception):
    """Base class for all errors raised by this package."""


class InvalidFlagCombination(AftidError, ValueError):
    """Event indicators violate the illness-death structure."""


class NegativeTime(AftidError, ValueError):
    """A time is non-positive, non-finite, or violates w >= v."""


class DimensionMismatch(AftidError, ValueError):
    """Rows carry covariate vectors of inconsistent length, or a required column is absent."""


class MissingValue(AftidError, ValueError):
    """A required field is empty or not a number; no imputation is attempted."""


class DomainError(AftidError, ValueError):
    """Argument outside the mathematical domain of a function."""


class NonConvergence(AftidError, RuntimeError):
    """An iterative numerical routine exhausted its subdivision or iteration budget."""


class NonFiniteObjective(AftidError, RuntimeError):
    """The objective returned a non-finite value at a probe point."""


class ZeroEvents(AftidError, ValueError):
    """A transition has no observed events, so nothing can be estimated for it."""


class DegenerateBandwidth(AftidError, ValueError):
    """Log event times carry no spread, so no positive bandwidth exists."""


class EmptyRiskSet(AftidError, RuntimeError):
    """A smoothed risk-set sum underflowed to zero inside a logarithm."""


class NegativeIncrement(AftidError, RuntimeError):
    """A cumulative-hazard difference over a truncation interval came out negative."""


class RootNotBracketed(AftidError, RuntimeError):
    """Inverse of a cumulative hazard could not be bracketed."""


class TooManyFailures(AftidError, RuntimeError):
    """More than half of the bootstrap replicates failed to converge."""


class ConfigError(AftidError, ValueError):
    """Invalid command-line or configuration-file input."""


class DataWarning(UserWarning):
    """Accepted but suspicious data, e.g. a death recorded at the diagnosis instant."""


class DegenerateDenominatorWarning(UserWarning):
    """Hazard denominator below threshold at some evaluation points; hazard set to 0 there."""


class FlatCoordinateWarning(UserWarning):
    """Profile likelihood has near-zero curvature in a coordinate; it is weakly identified."""


class ExtrapolationWarning(UserWarning):
    """Evaluation beyond the estimated hazard range; values held at the boundary."""
