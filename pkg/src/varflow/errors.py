"""Exception hierarchy.

Two families matter for the CLI exit-code mapping: ``DataError`` (malformed
files, dimension clashes, bad parameter values -> exit 2) and
``NumericalError`` (non-finite values produced by a solver -> exit 3).
"""


class VarflowError(Exception):
    """Base class for all library errors."""


class DataError(VarflowError):
    """Malformed input data or invalid parameter."""


class NumericalError(VarflowError):
    """Numerical failure during solving."""


class BadMagic(DataError):
    """File does not start with the expected magic sentinel."""


class Truncated(DataError):
    """File payload shorter or longer than the header promises."""


class NonPositiveDims(DataError):
    """Width, height or channel count is not >= 1."""


class IoFailure(DataError):
    """OS-level read/write failure."""


class DimMismatch(DataError):
    """Operands have incompatible grid dimensions."""


class NonPositiveDelta(DataError):
    """Huber threshold must be > 0."""


class NonPositiveValue(DataError):
    """A strictly positive scalar parameter was <= 0."""


class NonPositiveRange(DataError):
    """Displacement range must be >= 1."""


class NonPositiveGamma(DataError):
    """Edge sensitivity must be > 0."""


class IterBudgetZero(DataError):
    """Iteration budget must be >= 1."""


class RangeExceeded(DataError):
    """Stencil or lookup left the valid grid."""


class ProbOutOfRange(DataError):
    """Probability value outside [0, 1]."""


class DimTooSmall(DataError):
    """Grid too small for the requested resampling."""


class EmptyLevel(DataError):
    """Pyramid level would have zero extent."""


class StoreMismatch(DataError):
    """Checkpoint store inconsistent with the solver inputs."""


class NonFinite(NumericalError):
    """A solver produced NaN or infinity."""
