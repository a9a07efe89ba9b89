"""Exception types raised across hetpanel."""


class HetPanelError(Exception):
    """Base class for all package errors."""


class ValidationError(HetPanelError, ValueError):
    """Input data or configuration is invalid."""


class EstimationError(HetPanelError, RuntimeError):
    """An estimator could not produce a result."""


# panel ingestion
class MissingColumn(ValidationError):
    pass


class UnbalancedPanel(ValidationError):
    def __init__(self, message, missing=(), duplicated=()):
        super().__init__(message)
        self.missing = list(missing)
        self.duplicated = list(duplicated)


class NonNumericCell(ValidationError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NegativeCount(ValidationError):
    pass


class NegativeInput(ValidationError):
    pass


class EmptyKey(ValidationError):
    pass


# estimation
class NoConvergence(EstimationError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RankDeficient(EstimationError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class TooFewClusters(EstimationError):
    pass


class DegenerateUnit(EstimationError):
    def __init__(self, message, unit=None):
        super().__init__(message)
        self.unit = unit


class EmptyGroup(EstimationError):
    pass


class Separation(EstimationError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class AllZeroOutcome(EstimationError):
    pass


class NoVariation(EstimationError):
    pass


# study designs
class EventOutsideSample(ValidationError):
    pass


class InsufficientPrePeriod(ValidationError):
    pass


class NoTreatedUnits(ValidationError):
    pass


class TooManyTreated(ValidationError):
    pass


class BothZero(ValidationError):
    pass


class ZeroGrossShare(ValidationError):
    pass


class MissingCovariate(ValidationError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class MissingArtifact(HetPanelError, FileNotFoundError):
    pass
