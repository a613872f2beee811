"""Exception hierarchy shared by every subpackage."""


class AmesError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AmesError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(AmesError, ValueError):
    """An input lies outside the domain of an operation."""


class ContractError(AmesError, ValueError):
    """A caller violated a documented precondition."""


class DegenerateBatchError(AmesError, ValueError):
    """Batch statistics cannot be computed (e.g. a single row in train mode)."""


class ConfigError(AmesError, ValueError):
    """Invalid model, run or CLI configuration."""


class ParseError(AmesError, ValueError):
    """A dataset or config file is malformed."""


class DivergenceError(AmesError, ArithmeticError):
    """A computation produced NaN or Inf."""

    def __init__(self, message: str, op: str | None = None):
        super().__init__(message)
        self.op = op


class UnknownNodeError(AmesError, KeyError):
    """A tape id or parameter id does not exist."""
