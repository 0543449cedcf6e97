"""Exception types shared across the framework."""


class EivenError(Exception):
    """Base class for all framework errors."""


class ShapeError(EivenError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(EivenError, ValueError):
    """Invalid or inconsistent configuration."""


class DegenerateLossError(EivenError, ValueError):
    """Loss is undefined, e.g. a loss mask with no positions set."""


class MergeUnsupportedError(EivenError, ValueError):
    """Adapter re-parameterization requested for a nonlinear adapter."""


class PairingUnavailableError(EivenError, ValueError):
    """No comparison partner exists for the requested attribute."""


class TrainingDivergedError(EivenError, RuntimeError):
    """Training produced a non-finite loss."""


class DecodeError(EivenError, ValueError):
    """Sampling received non-finite logits."""


class SchemaError(EivenError, ValueError):
    """Synthetic-data schema is inconsistent or a value is unknown."""
