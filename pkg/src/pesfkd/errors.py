"""Exception hierarchy shared by every module."""


class PesfkdError(Exception):
    """Base class for all library errors."""


class DimensionError(PesfkdError, ValueError):
    """Tensor shapes or axes are incompatible."""


class DomainError(PesfkdError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ContractError(PesfkdError, RuntimeError):
    """A call violates a usage contract (e.g. backward on a non-scalar)."""


class ParameterError(PesfkdError, ValueError):
    """A hyperparameter is out of its allowed range."""


class SpecError(PesfkdError, ValueError):
    """A model, adapter or data spec is malformed."""


class DegenerateInputError(PesfkdError, ValueError):
    """The input makes the requested quantity undefined."""


class ParseError(PesfkdError, ValueError):
    """A data or config file could not be parsed."""


class RangeError(PesfkdError, ValueError):
    """A value (e.g. a class label) lies outside its declared range."""


class CompatibilityError(PesfkdError, ValueError):
    """A checkpoint does not match the configuration it is used with."""

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = list(fields or [])
