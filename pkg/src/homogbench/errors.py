"""Exception hierarchy shared by all modules."""


class HomogBenchError(Exception):
    """Base class for every error raised by the package."""


class UnknownName(HomogBenchError, KeyError):
    pass


class NonSymmetric(HomogBenchError, ValueError):
    pass


class ShapeMismatch(HomogBenchError, ValueError):
    pass


class EpsilonOutOfRange(HomogBenchError, ValueError):
    pass


class IllConditioned(HomogBenchError, ValueError):
    pass


class NoConvergence(HomogBenchError, RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DivergenceNotZero(HomogBenchError, RuntimeError):
    pass


class MissingMetadata(HomogBenchError, ValueError):
    """A hypothesis (e.g. Lipschitz continuity) is required but not declared."""


class GridTooCoarse(HomogBenchError, ValueError):
    pass


class SingularSystem(HomogBenchError, RuntimeError):
    pass


class EmptyRegion(HomogBenchError, ValueError):
    pass


class TooThick(HomogBenchError, ValueError):
    pass


class RegionNotNested(HomogBenchError, ValueError):
    pass


class TooFewPoints(HomogBenchError, ValueError):
    pass


class ParseError(HomogBenchError, ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ValidationError(HomogBenchError, ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
