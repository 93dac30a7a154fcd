"""Exception hierarchy. Each class carries a short ``category`` used for CLI exit codes."""


class FinThrustError(Exception):
    category = "error"
    exit_code = 1


class ConfigurationError(FinThrustError, ValueError):
    category = "config"
    exit_code = 2


class InputError(FinThrustError, ValueError):
    category = "input"
    exit_code = 3


class SchemaError(InputError):
    category = "schema"

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


class OutOfRangeError(FinThrustError, ValueError):
    category = "range"
    exit_code = 4


class OrderingError(FinThrustError, ValueError):
    category = "ordering"
    exit_code = 5


class NotReadyError(FinThrustError, RuntimeError):
    category = "not-ready"
    exit_code = 5


class FitQualityError(FinThrustError, ValueError):
    category = "fit"
    exit_code = 6


class InsufficientExcitationError(FitQualityError):
    category = "excitation"


class InversionError(FinThrustError, ValueError):
    category = "inversion"
    exit_code = 7
