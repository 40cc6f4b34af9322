"""Exception hierarchy shared by all coed modules."""

from __future__ import annotations


class CoedError(Exception):
    """Base class for every error raised by this package."""


class SingularMatrixError(CoedError):
    """A matrix expected to be positive definite has a non-positive pivot."""


class DomainError(CoedError):
    """A design lies outside the domain of a criterion (singular information matrix)."""


# model / ode


class GridEmpty(CoedError):
    pass


class ParseError(CoedError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonPsdRow(CoedError):
    def __init__(self, index: int):
        super().__init__(f"row {index}: information matrix is not positive semidefinite")
        self.index = index


class DuplicatePoint(CoedError):
    def __init__(self, index: int):
        super().__init__(f"row {index}: duplicate candidate coordinates")
        self.index = index


class StepUnderflow(CoedError):
    """The adaptive integrator needed a step below ``min_step``."""


class OdeFailure(CoedError):
    def __init__(self, point, reason: str = ""):
        super().__init__(f"ODE integration failed at {point!r}: {reason}")
        self.point = point


class MoleFractionDegenerate(CoedError):
    def __init__(self, point):
        super().__init__(f"mole fraction below floor at {point!r}")
        self.point = point


# solver / algorithms


class SolverError(CoedError):
    pass


class Infeasible(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class DomainEscape(SolverError):
    pass


class PreflightFailed(CoedError):
    def __init__(self, clause: str, message: str):
        super().__init__(f"preflight clause {clause!r} failed: {message}")
        self.clause = clause


class NotFeasible(CoedError):
    pass


class SchemaError(CoedError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
