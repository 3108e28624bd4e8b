"""Exception hierarchy shared by all solvers and simulators.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented status codes without inspecting messages.
"""


class WardropLabError(Exception):
    exit_code = 4


class ParseError(WardropLabError):
    exit_code = 2

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class NonConvergence(WardropLabError):
    exit_code = 3

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual}, iterations={iterations})")


class PreconditionError(WardropLabError):
    """Input violates a documented precondition."""


class InfeasibleMarginals(PreconditionError):
    pass


class StateSpaceTooLarge(PreconditionError):
    pass


class NoRouteForOD(PreconditionError):
    pass


class RouteExplosion(PreconditionError):
    pass


class DimensionMismatch(PreconditionError):
    pass


class InfeasibleFlow(PreconditionError):
    pass


class Unattainable(PreconditionError):
    pass


class DomainError(PreconditionError):
    pass
