"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside a function's mathematical domain."""


class DataError(ValueError):
    """Malformed or unusable input data."""


class SchemaError(DataError):
    """Serialized artifact has an unknown or incompatible schema."""


class ComparisonError(ValueError):
    """Fit reports cannot be compared against each other."""


class FitError(RuntimeError):
    """A fitting routine could not proceed."""


class InitializationError(FitError):
    """Initial parameter construction failed."""


class SamplerInitError(FitError):
    """Sampler could not start from the supplied initial state."""
