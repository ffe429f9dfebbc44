"""Exception types raised across the package.

Validation problems (bad shapes, bad configs, out-of-range inputs) raise
subclasses of :class:`ValidationError`; runtime failures (non-finite losses,
infeasible optimization problems) raise subclasses of :class:`RuntimeFailure`.
The CLI maps the former to exit code 2 and the latter to exit code 1.
"""


class TrajsynthError(Exception):
    """Base class for all package errors."""


class ValidationError(TrajsynthError, ValueError):
    """Invalid input or configuration detected before work starts."""


class OutOfBoundsError(ValidationError):
    """A point lies outside the grid rectangle."""


class EmptyInputError(ValidationError):
    """An operation requiring data received none."""


class AllMissingError(ValidationError):
    """A trajectory has no observed hours to interpolate from."""


class ShapeMismatchError(ValidationError):
    """Array or matrix operands have incompatible shapes."""


class ZeroSliceError(ValidationError):
    """An hour slice carries no probability mass and cannot be sampled."""


class ZeroMassError(ValidationError):
    """A histogram with zero total mass was passed to a distance measure."""


class TooShortError(ValidationError):
    """A trajectory has too few points for the requested measure."""


class LabelMismatchError(ValidationError):
    """User label sets do not align across datasets."""


class DimensionMismatchError(ValidationError):
    """Feature vectors do not match the model's expected dimension."""


class ConfigInvalidError(ValidationError):
    """A configuration file or object failed validation."""


class RuntimeFailure(TrajsynthError, RuntimeError):
    """Failure during execution of a valid request."""


class InfeasibleError(RuntimeFailure):
    """A constrained problem admits no solution (e.g. H * tau > n)."""


class NonFiniteError(RuntimeFailure):
    """A non-finite value appeared where finiteness is required."""


class NonFiniteLossError(NonFiniteError):
    """Training produced a NaN or infinite loss and was aborted."""


class InsufficientCoverageError(RuntimeFailure):
    """Check-in data does not cover every nighttime hour anywhere."""
