"""Exception hierarchy shared by every module."""


class RGFSError(Exception):
    """Base class for all package errors."""


class ConfigError(RGFSError, ValueError):
    """Invalid configuration or input contract violation (CLI exit code 2)."""


class DataError(RGFSError):
    """Dataset content could not be used."""


class CheckpointError(RGFSError):
    """Checkpoint archive unreadable, corrupt or incompatible."""


class TrainingError(RGFSError):
    """Training aborted, e.g. on a non-finite loss."""
