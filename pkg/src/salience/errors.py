"""Exception types; each maps to a CLI exit code."""


class SalienceError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(SalienceError, ValueError):
    exit_code = 2
    kind = "config"


class DataError(SalienceError, ValueError):
    exit_code = 3
    kind = "data"


class NumericalError(SalienceError, ArithmeticError):
    exit_code = 4
    kind = "numerical"
