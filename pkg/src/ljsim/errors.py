class LJSimError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(LJSimError):
    exit_code = 2


class NumericalInstabilityError(LJSimError):
    exit_code = 3

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class ConvergenceError(LJSimError):
    exit_code = 4
