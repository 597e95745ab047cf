"""Exception hierarchy.

Configuration problems (bad inputs, missing files, violated preconditions)
derive from :class:`ConfigurationError`; everything that goes wrong inside a
numerical routine derives from :class:`NumericalError`. The CLI maps the two
families to exit codes 2 and 1.
"""


class ThermobenchError(Exception):
    pass


class ConfigurationError(ThermobenchError, ValueError):
    pass


class NumericalError(ThermobenchError, ArithmeticError):
    pass


class ShapeError(ConfigurationError):
    pass


class OutOfSeasonError(ConfigurationError):
    pass


class InsufficientDataError(ConfigurationError):
    pass


class InsufficientExcitationError(ConfigurationError):
    pass


class PreconditionError(ConfigurationError):
    pass


class AssemblyError(ConfigurationError):
    pass


class DegenerateWindowError(NumericalError):
    pass


class SelectionError(NumericalError):
    pass


class InfeasibleError(NumericalError):
    """Constraint set is empty.

    ``certificate`` holds the minimum total constraint violation found by the
    phase-1 problem (strictly positive for an infeasible set).
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class UnboundedError(NumericalError):
    pass


class EvaluationError(NumericalError):
    pass


class IdentifiabilityError(NumericalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DivergenceError(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
