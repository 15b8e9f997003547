"""Exception hierarchy. Each family carries the process exit code used by the CLI."""


class DLSMError(Exception):
    exit_code = 1


class UsageError(DLSMError):
    exit_code = 2


class ConfigError(UsageError):
    """Invalid configuration key or value."""


class DataError(DLSMError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyGraphError(DataError):
    pass


class SamplingExhaustedError(DataError):
    pass


class UndefinedDensityError(DataError):
    pass


class UndefinedMetricError(DataError, ValueError):
    pass


class CheckpointError(DataError):
    pass


class ChecksumError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class NumericError(DLSMError, ArithmeticError):
    exit_code = 4


class NumericOverflowError(NumericError):
    pass


class TrainingDivergedError(NumericError):
    pass


class ShapeError(DLSMError, ValueError):
    exit_code = 4


class DomainError(DLSMError, ValueError):
    exit_code = 4


class InvariantViolation(NumericError):
    pass
