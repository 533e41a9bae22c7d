"""Exception hierarchy shared across the package.

Config problems map to CLI exit code 2, everything else to 3.
"""


class FedShiftError(Exception):
    """Base class for all package errors."""


class ConfigError(FedShiftError):
    """Invalid configuration value or unknown config key."""


class PartitionError(FedShiftError):
    """Client partition request cannot be satisfied."""


class DatasetFormatError(FedShiftError):
    """Malformed dataset or checkpoint file."""


class ShapeError(FedShiftError):
    """Dimension mismatch between arrays."""


class NumericError(FedShiftError):
    """Degenerate numeric state (zero norms, non-finite values)."""


class LabelError(FedShiftError):
    """Class label outside the head's range."""


class MetricError(FedShiftError):
    """Metric undefined for the given inputs (e.g. no impostor pairs)."""


class ClusteringError(FedShiftError):
    """Clustering could not produce a usable result."""


class TrainingError(FedShiftError):
    """Training aborted (non-finite loss or gradient)."""
