"""Exception types raised across the package."""


class EpiPinnError(Exception):
    """Base class for all package errors."""


# data ingestion / preprocessing
class DataError(EpiPinnError, ValueError):
    pass


class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedRow(DataError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class EmptySeries(DataError):
    pass


class TooShort(DataError):
    pass


class AllMissing(DataError):
    pass


class MissingValue(DataError):
    pass


# numerics
class NonFiniteError(EpiPinnError, ValueError):
    pass


class InvalidSpan(EpiPinnError, ValueError):
    pass


class DimensionMismatch(EpiPinnError, ValueError):
    pass


# training
class EmptyWindow(EpiPinnError, ValueError):
    pass


class EmptyCollocation(EpiPinnError, ValueError):
    pass


class DivergedLoss(EpiPinnError, RuntimeError):
    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


# forecasting / scoring
class InvalidProbability(EpiPinnError, ValueError):
    pass


class ScoringError(EpiPinnError, ValueError):
    pass


class LengthMismatch(ScoringError):
    pass


class EmptyInput(ScoringError):
    pass


class OutOfRange(ScoringError):
    pass


class ZeroNaiveMae(ScoringError):
    pass


class ZeroNaiveWis(ScoringError):
    pass


class InvalidInterval(ScoringError):
    pass


class InvalidAlpha(ScoringError):
    pass


class MissingQuantileLevel(ScoringError):
    pass


class EmptyCell(ScoringError):
    pass


class SchemaMismatch(ScoringError):
    pass
