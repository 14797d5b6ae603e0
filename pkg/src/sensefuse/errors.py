"""Exception and warning types shared across the pipeline."""


class SensefuseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfig(SensefuseError):
    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"invalid config field {field!r}: {reason}")


class NonFiniteValue(SensefuseError):
    pass


class SchemaError(SensefuseError):
    def __init__(self, column: str, reason: str = ""):
        self.column = column
        msg = f"schema violation in column {column!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class ParseError(SensefuseError):
    def __init__(self, row: int, column: str, reason: str = ""):
        self.row = row
        self.column = column
        msg = f"cannot parse row {row}, column {column!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class DuplicateTimestamp(SensefuseError):
    pass


class InsufficientData(SensefuseError):
    pass


class EmptySeries(SensefuseError):
    pass


class OrderTooHigh(SensefuseError):
    pass


class DegenerateInput(SensefuseError):
    pass


class SchemaMismatch(SensefuseError):
    pass


class NoUsableFeatures(SensefuseError):
    pass


class NoDonorRows(SensefuseError):
    pass


class SingularSystem(SensefuseError):
    pass


class NotEnoughRows(SensefuseError):
    pass


class UnsupportedFamily(SensefuseError):
    def __init__(self, family: str, what: str = "operation"):
        self.family = family
        super().__init__(f"{what} not supported for family {family!r}")


class TooFewParticipants(SensefuseError):
    pass


class EmptyFusion(SensefuseError):
    pass


class ZeroVariance(SensefuseError):
    pass


class LengthMismatch(SensefuseError):
    pass


class EmptyInput(SensefuseError):
    pass


class VersionMismatch(SensefuseError):
    pass


class RankDeficientWarning(UserWarning):
    """Fewer informative directions than requested components."""


class DroppedColumnWarning(UserWarning):
    """A column was dropped because no imputation statistic could be formed."""


class EmptyBlockWarning(UserWarning):
    """A modality block was skipped because it is absent cohort-wide."""
