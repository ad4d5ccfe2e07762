"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`CasclError`;
the CLI maps the three families below onto exit codes.
"""


class CasclError(Exception):
    """Base class for all package errors."""


class ConfigError(CasclError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(CasclError):
    """Malformed, inconsistent or insufficient data (exit code 3)."""


class NumericFailure(CasclError):
    """NaN/Inf showed up in parameters or losses (exit code 4)."""


# graph construction
class MultipleRoots(DataError):
    pass


class DanglingParent(DataError):
    pass


class CycleDetected(DataError):
    pass


class NegativeTime(DataError):
    pass


class InvalidGraph(DataError):
    """Structural problem not covered by a more specific error."""


# ingest
class MalformedLine(DataError):
    pass


class InconsistentCount(DataError):
    pass


class EmptyDataset(DataError):
    pass


class FractionOutOfRange(ConfigError):
    pass


# augmentation
class NoAdoptions(DataError):
    pass


class SingletonGraph(DataError):
    pass


class NotALeaf(DataError):
    pass


# numerics
class ShapeMismatch(CasclError, ValueError):
    pass


class ZeroVector(NumericFailure):
    pass


class NonScalarLoss(CasclError, ValueError):
    pass


class EigenFailure(NumericFailure):
    pass


# training / evaluation
class NonPositiveLabel(DataError):
    pass


class EmptySet(DataError):
    pass


class InsufficientData(DataError):
    pass


class NoLabeledData(DataError):
    pass


class NoTeacher(ConfigError):
    pass


class EmptyTestSplit(DataError):
    pass


class TooFewPositives(DataError):
    pass
