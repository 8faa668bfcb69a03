"""Exception hierarchy for hyperback."""

from __future__ import annotations


class HyperbackError(Exception):
    """Base class for all library errors."""


class GridTooCoarse(HyperbackError, ValueError):
    pass


class NonPositiveSpeed(HyperbackError, ValueError):
    pass


class HyperbolicityViolation(HyperbackError, ValueError):
    pass


class HyperbolicitySignChange(HyperbackError, RuntimeError):
    """The simulated state left the region where the speeds keep their signs."""


class NoConvergence(HyperbackError, RuntimeError):
    def __init__(self, max_iter: int, last_increment: float):
        super().__init__(
            f"Picard iteration did not converge in {max_iter} sweeps "
            f"(last increment {last_increment:.3e})"
        )
        self.max_iter = max_iter
        self.last_increment = last_increment


class QNearZero(HyperbackError, ValueError):
    pass


class DegenerateRates(HyperbackError, ValueError):
    pass


class UnstableStep(HyperbackError, RuntimeError):
    pass


class SmallDenominator(HyperbackError, ValueError):
    pass


class NonPositiveNorm(HyperbackError, ValueError):
    pass


class InvalidField(HyperbackError, ValueError):
    pass


class ExpressionSyntaxError(HyperbackError, ValueError):
    """Malformed coefficient expression; ``offset`` is a byte offset into the source."""

    def __init__(self, offset: int, expected, found: str = ""):
        self.offset = int(offset)
        self.expected = tuple(sorted(expected))
        self.found = found
        what = f"found {found!r}" if found else "found end of input"
        super().__init__(f"at offset {self.offset}: expected one of {', '.join(self.expected)}; {what}")


class UnknownIdentifier(HyperbackError, ValueError):
    def __init__(self, name: str, offset: int = -1):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r}")


class ExpressionEvaluationError(HyperbackError, ArithmeticError):
    """Division by zero or an invalid operation while evaluating an expression."""


class MissingField(HyperbackError, ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing required field {name!r}")


class ConfigError(HyperbackError, ValueError):
    pass
