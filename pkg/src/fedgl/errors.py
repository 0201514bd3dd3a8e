"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class ParseError(ValidationError):
    """A text file could not be parsed.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
