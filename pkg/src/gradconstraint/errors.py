"""Exception hierarchy shared by all modules."""


class GradConstraintError(Exception):
    """Base class for all package errors."""


class ParameterError(GradConstraintError, ValueError):
    """An argument is outside its documented range."""


class MeshFormatError(GradConstraintError, ValueError):
    """A mesh file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GeometryError(GradConstraintError, ValueError):
    """A mesh element is degenerate or inverted."""


class DataError(GradConstraintError, ValueError):
    """Problem data violates its invariants (e.g. a non-positive obstacle)."""


class SolverError(GradConstraintError, RuntimeError):
    """A linear solve failed or missed its residual contract."""


class NonConvergenceError(SolverError):
    """An iteration hit its cap before meeting the stopping criterion.

    The partial report is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FeasibilityError(GradConstraintError, ValueError):
    """An argument violates an admissibility constraint of the estimator."""
