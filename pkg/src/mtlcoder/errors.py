"""Exception hierarchy shared across the package."""


class MtlCoderError(Exception):
    """Base class for all package errors."""


class DimensionError(MtlCoderError, ValueError):
    """Operand shapes do not conform to an operation's shape rule."""


class NumericError(MtlCoderError, ArithmeticError):
    """A forward computation produced NaN or Inf."""


class UsageError(MtlCoderError, ValueError):
    """An operation was called with arguments outside its contract."""


class DataError(MtlCoderError, ValueError):
    """Input data is inconsistent with the label space or schema."""


class CorpusParseError(DataError):
    """A corpus line could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(MtlCoderError, ValueError):
    """A model or run configuration is invalid."""


class TrainingError(MtlCoderError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")


class CheckpointError(MtlCoderError, ValueError):
    """A checkpoint archive is truncated, corrupt, or of an unsupported version."""
