"""Exception types shared across the package.

The CLI maps these onto distinct process exit codes, so keep the
hierarchy flat and the categories coarse.
"""


class RiotError(Exception):
    """Base class for package-specific failures."""


class ConfigError(RiotError):
    """Invalid or inconsistent run configuration."""


class DataError(RiotError):
    """Unusable input data (empty, non-monotonic time, wrong rate...)."""


class SchemaError(DataError):
    """Input file is missing required columns."""


class DivergedError(RiotError):
    """Training produced non-finite losses or gradients."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
