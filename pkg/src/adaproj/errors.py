"""Exception types shared across the package.

Configuration problems (bad keys, impossible hyperparameters) and data
problems (empty or malformed datasets) are kept distinct so the CLI can
map them to different exit codes.
"""


class AdaprojError(Exception):
    """Base class for all package errors."""


class ZeroVectorError(AdaprojError):
    """Vector norm is below the zero threshold; projection undefined."""


class DimensionMismatchError(AdaprojError):
    """Operand dimensions do not agree."""


class RankDeficientError(AdaprojError):
    """Matrix rows are not linearly independent."""


class InvalidDimsError(AdaprojError):
    """Requested dimensions violate a structural constraint (e.g. J >= D)."""


class EmptyBatchError(AdaprojError):
    """Batch statistics are empty."""


class ConfigError(AdaprojError):
    """Invalid configuration (unknown key, bad value, inconsistent dims)."""


class DataError(AdaprojError):
    """Malformed or inconsistent dataset contents."""


class EmptyDatasetError(DataError):
    """Dataset contains no usable samples."""


class EmptyInputError(DataError):
    """An operation received an empty collection."""


class EmptyClassError(DataError):
    """A metric needs both normal and anomalous scores."""


class InvalidPError(AdaprojError):
    """Partial-AUC fraction p outside (0, 1]."""


class InvalidSpecError(ConfigError):
    """Synthetic dataset specification is invalid."""


class TooShortError(DataError):
    """Waveform shorter than one analysis frame."""
