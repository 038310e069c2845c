"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the operands do not line up."""


class DomainError(ValueError):
    """An argument is outside the operation's domain (empty input, tau <= 0, ...)."""


class FormatError(ValueError):
    """A serialized file is malformed; the message names the failing field."""


class DeterminismError(RuntimeError):
    """A callable that must be deterministic returned two different values."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or contains unknown keys."""


class InputError(ValueError):
    """An input data file is malformed; the message carries the line number."""
