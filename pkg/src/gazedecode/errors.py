"""Exception hierarchy shared across the package."""


class GazeDecodeError(Exception):
    """Base class for all package errors."""


class DimensionError(GazeDecodeError, ValueError):
    pass


class FormatError(GazeDecodeError, ValueError):
    pass


class ParameterError(GazeDecodeError, ValueError):
    pass


class StimulusError(GazeDecodeError, ValueError):
    pass


class EmptyInputError(GazeDecodeError, ValueError):
    pass


class DegenerateError(GazeDecodeError, ValueError):
    """Raised for zero-mass maps and posteriors that cannot be renormalized."""


class ConditionError(GazeDecodeError, ValueError):
    pass


class NumericError(GazeDecodeError, ArithmeticError):
    pass


class TrainingError(GazeDecodeError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class ConfigError(GazeDecodeError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
