"""Exception hierarchy shared across the package."""


class AclsError(Exception):
    """Base class for all errors raised by this package."""


class DataError(AclsError):
    """Bad input data: missing files, malformed records, unknown labels."""


class ConfigError(AclsError):
    """Invalid configuration value or unknown configuration key."""


class CheckpointError(DataError):
    """Corrupt, truncated, or shape-incompatible checkpoint file."""


class NumericError(AclsError):
    """Non-finite values where finite ones are required (divergence)."""
