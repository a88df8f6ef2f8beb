"""Exception types shared across the package; the CLI maps them to exit codes."""


class HoopnetError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(HoopnetError):
    """Bad configuration document, key, value, or command usage."""


class DataError(HoopnetError):
    """Malformed or inconsistent input data (ingest, windows, splits)."""


class CheckpointError(HoopnetError):
    """Checkpoint file does not match the current model or is corrupt."""


class DivergenceError(HoopnetError):
    """Training produced a non-finite loss."""
