"""Exception taxonomy.

Two bases matter to the CLI: ValidationError maps to exit code 2 (bad input,
bad config, contract violations at the boundary), ComputationError maps to
exit code 3 (failures that arise while computing on accepted input).
"""


class LipfuseError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LipfuseError):
    pass


class ComputationError(LipfuseError):
    pass


# -- configuration / files ---------------------------------------------------

class MissingFile(ValidationError):
    pass


class SchemaViolation(ValidationError):
    """Config key missing, unknown, or of the wrong type; names the key."""


class IllegalValue(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class DiskFull(ComputationError):
    pass


# -- data shapes --------------------------------------------------------------

class EmptyViewSet(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class ImageTooSmall(ValidationError):
    pass


class GridTooFine(ValidationError):
    pass


class InsufficientFrames(ValidationError):
    pass


# -- model training -----------------------------------------------------------

class DegenerateData(ComputationError):
    pass


class NonFiniteLoss(ComputationError):
    pass


class EmptyState(ComputationError):
    pass


class LexiconGap(ValidationError):
    pass


class PathInfeasible(ComputationError):
    pass


# -- fusion -------------------------------------------------------------------

class UtteranceMismatch(ValidationError):
    pass


class ViewWeightMismatch(ValidationError):
    pass


class EmptyLists(ValidationError):
    pass


class UnsupportedK(ValidationError):
    pass


class AllZeroCorrectness(ValidationError):
    pass


# -- metrics / harness --------------------------------------------------------

class EmptyReference(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class TooFewSubjects(ValidationError):
    pass


class EmptyTable(ValidationError):
    pass
