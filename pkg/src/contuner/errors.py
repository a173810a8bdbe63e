"""Exception types shared across the package."""


class ContunerError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(ContunerError, ValueError):
    """A precondition on an operation's arguments was violated."""


class ParseError(ContunerError, ValueError):
    """A corpus record could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(ContunerError, ValueError):
    """A corpus-level consistency check failed (duplicate ids, unknown labels)."""


class FrozenModuleError(ContunerError, RuntimeError):
    """Attempted to train or mutate a frozen module."""


class NumericalError(ContunerError, ArithmeticError):
    """Non-finite value encountered during training; the run must abort."""


class ContractViolationError(ContunerError, RuntimeError):
    """Cache contract broken, e.g. storing logits for a module that is not frozen."""


class CacheIntegrityError(ContunerError, RuntimeError):
    """Cache file corrupt beyond the recoverable truncated tail."""


class ConfigurationError(ContunerError, RuntimeError):
    """A runtime configuration guard tripped, e.g. the padding value is not
    below the observed logit floor."""
