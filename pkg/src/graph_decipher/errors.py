"""Exception hierarchy shared by every module."""


class GDError(Exception):
    """Base class for all package errors."""


class ParseError(GDError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ValidationError(GDError, ValueError):
    pass


class CapacityError(GDError, ValueError):
    pass


class ShapeError(GDError, ValueError):
    pass


class DegenerateRowError(GDError, ValueError):
    pass


class ContractError(GDError, ValueError):
    pass


class NumericError(GDError, FloatingPointError):
    pass


class CheckpointError(GDError):
    pass
