"""Exception hierarchy. Every domain failure derives from EquilcastError."""


class EquilcastError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


# spectra
class GridMismatch(EquilcastError):
    pass


class CalibrationDegenerate(EquilcastError):
    pass


class NoFringePeak(EquilcastError):
    pass


class WindowOutOfRange(EquilcastError):
    pass


class DegenerateBaseline(EquilcastError):
    pass


# simkit
class InvalidParameters(EquilcastError):
    pass


class PoreBlocked(InvalidParameters):
    pass


class SolverDiverged(EquilcastError):
    pass


class DegenerateFit(EquilcastError):
    pass


class InsufficientFits(EquilcastError):
    pass


class DistributionInfeasible(EquilcastError):
    pass


class AmbiguousSnr(EquilcastError):
    pass


class NoDiscriminant(EquilcastError):
    pass


# neural / ensemble
class NonFiniteInput(EquilcastError):
    pass


class TrainingDiverged(EquilcastError):
    def __init__(self, message, member=None):
        super().__init__(message)
        self.member = member


class EnsembleDiverged(EquilcastError):
    pass


class ShapeMismatch(EquilcastError):
    pass


class ModelFormatError(EquilcastError):
    pass


# metrics
class NotSettled(EquilcastError):
    pass


class Undefined(EquilcastError):
    pass


# datahub
class EmptyCorpus(EquilcastError):
    pass


class DegenerateRange(EquilcastError):
    pass


class MissingCurveFile(EquilcastError):
    pass


class DuplicateId(EquilcastError):
    pass


class CorpusFormatError(EquilcastError):
    pass
