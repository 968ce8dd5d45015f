"""Exception hierarchy. Everything raised on purpose derives from SecestError."""


class SecestError(Exception):
    """Base class for all library errors."""


class InvalidSystem(SecestError, ValueError):
    """System matrices have inconsistent shapes or bad noise bounds."""


class NotObservable(SecestError):
    def __init__(self, message, uncovered=()):
        super().__init__(message)
        self.uncovered = tuple(uncovered)


class DefectiveMatrix(SecestError):
    """A repeated eigenvalue was found while diagonalizing."""


class NotJordanForm(SecestError):
    pass


class IllConditioned(SecestError):
    pass


class UnpairedComplexBlock(SecestError):
    pass


class IntertwiningViolated(SecestError):
    pass


class Infeasible(SecestError):
    """No gain satisfies sigma_max(A - L C) < 1 / (2 sqrt(n_i) + 1).

    Carries the best gain that was found so callers can fall back to it.
    """

    def __init__(self, message, sigma=None, bound=None, gain=None, sensor=None):
        super().__init__(message)
        self.sigma = sigma
        self.bound = bound
        self.gain = gain
        self.sensor = sensor


class InequalityViolated(SecestError):
    def __init__(self, message, sensor=None):
        super().__init__(message)
        self.sensor = sensor


class DimensionMismatch(SecestError, ValueError):
    pass


class NonFiniteInput(SecestError):
    pass


class EmptyCoverage(SecestError):
    def __init__(self, message, uncovered=()):
        super().__init__(message)
        self.uncovered = tuple(uncovered)


class SparsityViolated(SecestError):
    pass


class SimulationAborted(SecestError):
    """Raised with the partial trace attached when the state stops being finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
