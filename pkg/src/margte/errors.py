"""Exception types raised across the package."""


class MargteError(Exception):
    """Base class for every error raised by margte."""


class DomainError(MargteError, ValueError):
    """An argument lies outside the domain of a function (e.g. negative productivity)."""


class DegenerateRegimeError(MargteError):
    """A regime has zero entrant mass, so its participant distribution is undefined."""


class DegenerateWeightsError(MargteError):
    """A weighting function integrates (or sums) to zero."""


class NonConvergenceError(MargteError):
    """An iterative routine stopped before meeting its tolerance.

    ``estimate`` carries the best value reached, when there is one.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ThresholdUnattainableError(MargteError, ValueError):
    pass


class EmptyStratumError(MargteError):
    pass


class InsufficientDataError(MargteError):
    pass


class SeparationError(MargteError):
    """Logistic likelihood has no finite maximiser."""


class EmptyMatchError(MargteError):
    pass


class UnstableEstimatorError(MargteError):
    pass


class ParseError(MargteError, ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(MargteError, ValueError):
    pass
