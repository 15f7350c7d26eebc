"""Exception hierarchy.

Each family maps onto a CLI exit code: validation problems exit 1, bad or
unusable data exits 2, degenerate training/metric situations exit 3.
"""


class OvmorphError(Exception):
    exit_code = 2


class ValidationError(OvmorphError):
    """Configuration or argument error."""

    exit_code = 1


class DataError(OvmorphError):
    exit_code = 2


class InvalidInputError(DataError, ValueError):
    pass


class ParseError(DataError):
    """A file could not be parsed; ``row`` is the 1-based data row if known."""

    def __init__(self, message, path=None, row=None):
        self.path = path
        self.row = row
        where = ""
        if path is not None:
            where += f"{path}"
        if row is not None:
            where += f" row {row}"
        super().__init__(f"{where}: {message}" if where else message)


class DimensionMismatchError(ParseError):
    pass


class DuplicateIdError(ParseError):
    pass


class NonFiniteValueError(ParseError):
    pass


class InsufficientTissueError(DataError):
    """Too few pixels above the optical-density threshold (blank patch)."""


class SingularStainBasisError(DataError):
    pass


class MissingEmbeddingError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InfeasibleStratificationError(DataError):
    pass


class DegenerateError(OvmorphError):
    exit_code = 3


class DegenerateTrainingError(DegenerateError):
    pass


class FoldDegenerateError(DegenerateError):
    def __init__(self, fold, message):
        self.fold = fold
        super().__init__(f"fold {fold}: {message}")


class UndefinedMetricError(DegenerateError):
    pass
