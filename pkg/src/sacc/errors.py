"""Exception types shared across the package."""


class SaccError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SaccError, ValueError):
    """Shapes of the operands are incompatible with the requested operation."""


class ConfigError(SaccError, ValueError):
    """A configuration value is missing, unknown, or out of its valid range."""


class ContractViolation(SaccError, RuntimeError):
    """A caller-visible precondition was violated (e.g. an unfrozen group
    where a frozen one is required)."""


class StateError(SaccError, RuntimeError):
    """Internal state does not permit the operation (e.g. a step before
    gradients exist)."""


class InputError(SaccError, ValueError):
    """User-supplied data is malformed or empty."""


class ImageReadError(SaccError, OSError):
    """An image file could not be decoded; the message names the file."""


class CheckpointError(SaccError, ValueError):
    """A checkpoint file is malformed or incompatible."""
