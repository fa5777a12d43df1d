"""Exception hierarchy shared across the package."""


class RSNError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeError(RSNError):
    """A tensor shape or dtype does not satisfy an operation's contract."""


class GraphError(RSNError):
    """A network graph is malformed or used out of order."""


class ConfigError(RSNError):
    """A configuration value or file is invalid."""


class CheckpointError(RSNError):
    """A checkpoint or heatmap dump file is corrupt or unsupported."""


class DataError(RSNError):
    """A dataset or annotation file is malformed."""


class TrainingError(RSNError):
    """Training aborted (for example on a non-finite loss)."""
