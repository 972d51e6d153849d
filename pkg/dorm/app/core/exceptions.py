"""
Error hierarchy shared by every module. The CLI maps each family to an exit code.
"""


class DormError(Exception):
    exit_code: int = 1


class UsageError(DormError):
    exit_code = 1


class DataError(DormError):
    exit_code = 2


class PinyinTableError(DataError):
    pass


class DecompositionError(DataError):
    pass


class EncodingError(DataError):
    pass


class DatasetError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericError(DormError):
    exit_code = 3


class ShapeError(NumericError):
    pass


class NonFiniteLossError(NumericError):
    def __init__(self, term: str, value: float):
        super().__init__(f"Non-finite loss in term '{term}': {value}")
        self.term = term
        self.value = value


class GradientCheckError(NumericError):
    pass
