"""Exception types shared across the package."""


class MultiLabelTError(Exception):
    """Base class for all package errors."""


class ValidationError(MultiLabelTError, ValueError):
    """A configuration or argument failed validation."""


class DegenerateMixture(MultiLabelTError):
    """The two-component mixture could not be fitted or separated."""


class EmptyStratum(MultiLabelTError):
    """A selected subset has no support for one clean-label value."""


class NonInvertibleConditional(MultiLabelTError):
    """The conditional table is too close to singular to invert."""


class DegeneratePrior(MultiLabelTError):
    """The recovered class prior falls outside the admissible range."""


class NoAcceptedCandidate(MultiLabelTError):
    """Every candidate estimate for a class was rejected."""


class DegenerateIntermediate(MultiLabelTError):
    """Hard predictions for a class contain only one value."""


class ConditioningError(MultiLabelTError):
    """A transition matrix is too close to singular for the requested use."""


class NumericalGuardError(MultiLabelTError):
    """A denominator fell below the numerical guard."""


class NonFiniteLoss(MultiLabelTError):
    """Training produced a non-finite loss."""


class InvalidWitness(MultiLabelTError):
    """A constructed alternative solution leaves the probability simplex."""
