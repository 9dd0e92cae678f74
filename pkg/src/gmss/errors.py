"""Exception hierarchy shared by every gmss module."""


class GmssError(Exception):
    pass


class DimensionError(GmssError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(GmssError, ArithmeticError):
    """A NaN/Inf appeared, or an iteration failed to converge."""


class ContractError(GmssError, ValueError):
    """A documented precondition was violated."""


class FormatError(GmssError, ValueError):
    """A binary or JSON file does not match its documented layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(GmssError, ValueError):
    """A configuration file is inconsistent."""
