"""Exception hierarchy shared across the package."""


class FFTrustError(Exception):
    """Base class for all package errors."""


class ContractError(FFTrustError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DomainError(ContractError):
    """A value lies outside the mathematical domain of an operation."""


class ConfigError(FFTrustError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(FFTrustError, ValueError):
    """Malformed or out-of-range data."""


class ParseError(DataError):
    """A binary file could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(DataError):
    """File format version is not supported."""


class IntegrityError(DataError):
    """Stored checksum does not match the payload."""
