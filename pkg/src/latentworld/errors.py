"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to:
2 config, 3 I/O, 4 numeric, 5 contract.
"""


class LatentWorldError(Exception):
    exit_code = 1


class ConfigError(LatentWorldError):
    """Invalid configuration value, unknown key, or incompatible geometry."""

    exit_code = 2


class CheckpointError(LatentWorldError):
    """File-level failure while reading or writing persistent artifacts."""

    exit_code = 3


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class NumericError(LatentWorldError):
    """Non-finite values or numerically unusable inputs."""

    exit_code = 4


class SingularMatrixError(NumericError):
    pass


class ContractError(LatentWorldError):
    """A documented precondition or postcondition was violated."""

    exit_code = 5


class ShapeError(ContractError):
    """Dimension mismatch; message names both offending shapes."""
