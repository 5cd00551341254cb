"""Exception hierarchy.

Each family maps onto a CLI exit code: data problems exit 3, numerical
failures exit 4, everything raised from argument/config validation exits 2.
"""


class FastBKMRError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(FastBKMRError):
    exit_code = 2


class DataError(FastBKMRError):
    exit_code = 3


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"MissingColumn({column!r})")
        self.column = column


class DegenerateColumn(DataError):
    def __init__(self, column):
        super().__init__(f"DegenerateColumn({column!r}): zero variance")
        self.column = column


class DomainError(FastBKMRError, ValueError):
    exit_code = 2


class SubsetTooSmall(DomainError):
    pass


class TooLarge(DomainError):
    pass


class ModeError(DomainError):
    pass


class ConfigMismatch(DomainError):
    pass


class NumericalError(FastBKMRError, ArithmeticError):
    exit_code = 4


class RankDeficient(NumericalError):
    pass


class DegenerateRegressor(NumericalError):
    pass
