class ClipError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(ClipError, ValueError):
    """A file on disk does not match its declared format."""


class ValidationError(ClipError, ValueError):
    """A sample or annotation violates a domain invariant."""


class ConfigError(ClipError, ValueError):
    """An inconsistent combination of schedule or training settings."""


class StateError(ClipError, RuntimeError):
    """An operation was attempted on an object missing required state."""
