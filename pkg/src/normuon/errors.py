"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or unsupported dimensions."""


class NumericError(ArithmeticError):
    """A numerical routine produced non-finite values or failed to converge."""


class DomainError(ValueError):
    """Input is outside the mathematical domain of the operation."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ComparisonError(RuntimeError):
    """Two artifacts that should be comparable are not."""
