"""Exception types shared across the package."""


class SSCMError(Exception):
    """Base class for all package errors."""


class ShapeError(SSCMError):
    """Operand shapes violate an operation's contract."""


class ContractError(SSCMError):
    """An operation was called outside its contract (non-scalar loss, dtype
    mismatch, NaN produced in debug mode, ...)."""


class UnsupportedSizeError(SSCMError):
    """Fast FFT path requires power-of-two extents; pad the input instead."""


class ConfigError(SSCMError):
    """Invalid or inconsistent configuration value."""


class FormatError(SSCMError):
    """Malformed file content (SSCT, checkpoint, or PGM)."""


class TrainingError(SSCMError):
    """Non-finite gradient or loss encountered during optimization."""
