"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 1, IO and format
problems -> 2, NumericError -> 3.
"""


class TcmtlError(Exception):
    """Base class for all package errors."""


class DimensionError(TcmtlError):
    """Array shapes disagree with a kernel or layer contract."""


class NumericError(TcmtlError):
    """A numeric invariant broke: non-finite value, divergence, singular solve."""


class FormatError(TcmtlError):
    """A file (PGM, manifest, checkpoint) does not match its declared format."""


class ConfigError(TcmtlError):
    """Invalid or inconsistent configuration."""
