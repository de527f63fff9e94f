"""Exception hierarchy.

Configuration problems and numerical failures are kept apart so the command
line can map them to different exit codes.
"""


class MoireError(Exception):
    """Base class for all package errors."""


class ConfigError(MoireError):
    """Bad user input (exit code 2)."""


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class NumericalError(MoireError):
    """A computation could not deliver a trustworthy number (exit code 3)."""


class SingularBasis(NumericalError):
    pass


class DegenerateScale(NumericalError):
    pass


class DivergentTail(NumericalError):
    pass


class NotDiophantine(NumericalError):
    pass


class NoDecay(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class LineSearchStalled(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass
