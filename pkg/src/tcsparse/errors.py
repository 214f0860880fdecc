"""Exception types raised across the package."""


class ParseError(ValueError):
    """Malformed MatrixMarket input. ``line`` is 1-based, or None."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ArgumentError(ValueError):
    pass


class FormatError(ValueError):
    """Inconsistent blocked-format arrays or a corrupt container."""


class ShapeError(ValueError):
    pass
