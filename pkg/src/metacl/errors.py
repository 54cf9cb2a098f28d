"""Exception types shared across the library."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A caller violated an API precondition."""


class ConfigurationError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class UnknownTaskError(KeyError):
    """Task ID was never registered with the model."""


class CapacityError(ValueError):
    """More tasks requested than the model was sized for at construction."""


class MemoryConsistencyError(RuntimeError):
    """A stored logit snapshot no longer matches the live model's output shape."""


class FormatError(ValueError):
    """A binary dataset file violates its format."""


class MetricUndefinedError(ValueError):
    """The requested metric is undefined for the given matrix size."""


class NoDataError(FileNotFoundError):
    """A results directory contains no records."""
