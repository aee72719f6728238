"""Exception hierarchy shared by every module of the package."""


class MfgError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MfgError, ValueError):
    """Inputs have inconsistent shapes or an invalid configuration."""


class ModelIntegrityError(MfgError, ValueError):
    """A model produced an invalid probability vector."""


class NumericError(MfgError, FloatingPointError):
    """A computation produced a non-finite value."""


class GridParseError(MfgError, ValueError):
    """A wall-map document could not be parsed.

    ``line`` and ``column`` are 1-based; either may be ``None`` when the
    error is not tied to a position.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)
