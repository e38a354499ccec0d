"""Exception types and the exit codes the command line maps them to."""


class SelbootError(Exception):
    exit_code = 1


class ConfigError(SelbootError, ValueError):
    exit_code = 2


class ParseError(SelbootError, ValueError):
    exit_code = 3

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where = f" ({where})"
        super().__init__(message + where)


class InputOutputError(SelbootError, OSError):
    exit_code = 4


class FitError(SelbootError, RuntimeError):
    exit_code = 5

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class InsufficientDataError(FitError):
    pass


class NumericError(SelbootError, ArithmeticError):
    exit_code = 6


class DomainError(NumericError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ModeError(DomainError):
    """Outside-mode formula applied to an inside observation, or vice versa."""


class PreconditionError(DomainError):
    pass


class AmbiguityError(DomainError):
    """The projection onto the region boundary is not unique."""


class ScaleError(ConfigError):
    pass


EXIT_CODES = {
    "ok": 0,
    "other": SelbootError.exit_code,
    "config": ConfigError.exit_code,
    "parse": ParseError.exit_code,
    "io": InputOutputError.exit_code,
    "fit": FitError.exit_code,
    "numeric": NumericError.exit_code,
}
