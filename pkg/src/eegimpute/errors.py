"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PipelineError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(PipelineError):
    """A documented precondition of an operation was violated."""


class ValidationError(PipelineError):
    """Input data failed validation (bad coordinates, unknown labels, ...)."""


class DegenerateInputError(ContractError):
    """Input is degenerate for the requested computation (e.g. zero norm)."""


class NumericalError(PipelineError):
    """A numerical procedure failed (singular system, non-finite loss)."""


class ConfigError(PipelineError):
    """Invalid or unrecognized configuration."""


class FormatError(PipelineError):
    """A file does not conform to its declared on-disk format."""
