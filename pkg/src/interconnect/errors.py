"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class DtypeError(ValueError):
    """Operand dtypes disagree or are unsupported."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class LengthError(ValueError):
    """A sequence is too short (or collapses to nothing) for an operation."""


class ConfigurationError(ValueError):
    """A configuration value or combination is invalid."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint files are truncated or internally inconsistent."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor does not match the declared shape or dtype."""
