"""Exception hierarchy. CLI exit codes map onto these classes."""


class HumattnError(Exception):
    exit_code = 1


class ValidationError(HumattnError, ValueError):
    """Input violates a documented precondition."""

    exit_code = 2


class DimensionError(ValidationError):
    """Shapes or lengths do not line up."""


class ConfigError(ValidationError):
    """Invalid model, integration or training configuration."""


class DataError(HumattnError):
    exit_code = 3


class FormatError(DataError):
    """Binary file has the wrong magic, is truncated, or is otherwise malformed."""


class GenerationError(DataError):
    """A question template cannot be satisfied under the dataset settings."""


class NumericalError(HumattnError, FloatingPointError):
    """NaN/Inf surfaced by a forward op or the optimizer."""

    exit_code = 4
