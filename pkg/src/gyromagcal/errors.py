"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class CalibrationError(Exception):
    category = "error"
    exit_code = 1


class InputError(CalibrationError, ValueError):
    category = "input-error"
    exit_code = 2


class LogFormatError(InputError):
    """Malformed log file. `row` is the 1-based file line, when known."""

    def __init__(self, message: str, path=None, row: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f":{row}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.row = row


class ExcitationError(CalibrationError):
    """Not enough rotation to identify the parameters."""

    category = "excitation-error"
    exit_code = 3


class DivergenceError(CalibrationError):
    category = "divergence"
    exit_code = 4
