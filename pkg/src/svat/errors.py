"""Exception types shared across the package."""


class SvatError(Exception):
    pass


class DimensionError(SvatError, ValueError):
    """Operand shapes do not line up."""


class NumericError(SvatError, ArithmeticError):
    """A NaN or infinity reached a checked boundary."""


class UsageError(SvatError, ValueError):
    """Caller violated an argument precondition."""


class ContractError(SvatError, ValueError):
    """A value violates a documented mathematical contract."""


class DataError(SvatError, ValueError):
    pass


class IngestionError(DataError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


class AlignmentError(DataError):
    pass


class TrainingDiverged(NumericError):
    def __init__(self, term, epoch, batch_day):
        super().__init__(f"non-finite {term} at epoch {epoch}, day index {batch_day}")
        self.term = term
        self.epoch = epoch
        self.batch_day = batch_day
