"""Exception types shared across the package, with CLI exit codes."""


class LatentVideoError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 1


class ConfigError(LatentVideoError):
    """Invalid configuration, missing files, or incompatible settings."""

    exit_code = 2


class DimensionError(ConfigError):
    """Tensor shapes do not satisfy an operation's contract."""


class CapacityError(ConfigError):
    """A sequence exceeds the model's context budget."""


class VocabularyError(ConfigError):
    """A code index falls outside the configured vocabulary."""


class NumericError(LatentVideoError):
    """Non-finite values where finite ones are required."""

    exit_code = 3


class CheckpointMismatchError(LatentVideoError):
    """Paired checkpoints do not belong together (content hash mismatch)."""

    exit_code = 4
