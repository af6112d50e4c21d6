"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Unsupported or inconsistent configuration."""


class ShapeError(ValueError):
    """Array shapes or divisibility constraints do not line up."""


class UsageError(RuntimeError):
    """An operation was called out of order, e.g. backward before forward."""


class IngestionError(OSError):
    """A dataset directory could not be read into samples."""
