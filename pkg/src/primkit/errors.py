"""Exception hierarchy shared by every primkit module."""


class PrimkitError(Exception):
    """Base class for all library errors."""


class ShapeError(PrimkitError, ValueError):
    """Array dimensions do not agree with a layer or function contract."""


class ConfigError(PrimkitError, ValueError):
    """Invalid configuration value or combination."""


class NumericError(PrimkitError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class DegenerateInputError(PrimkitError, ValueError):
    """Input too small or too constant for the requested statistic."""


class LabelError(PrimkitError, ValueError):
    """Label value outside the five-primitive range."""


class ParseError(PrimkitError, ValueError):
    """Malformed input file. Carries the row/column location in the message."""


class ModeError(PrimkitError, RuntimeError):
    """Operation called in the wrong train/eval mode."""


class UninitializedStatsError(PrimkitError, RuntimeError):
    """Batch-norm evaluated before running statistics exist."""


class ContractError(PrimkitError, ValueError):
    """Inputs violate a documented data contract (e.g. mismatched shapes or schema)."""


class CheckpointError(PrimkitError):
    """Base class for checkpoint persistence failures."""


class CheckpointFormatError(CheckpointError):
    """Checkpoint files are missing, truncated, or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""


class IncompatibleFeaturesError(CheckpointError):
    """Feature-order hash of the checkpoint does not match the data."""


class FamilyMismatchError(CheckpointError):
    """Checkpoint holds a different model family than requested."""
