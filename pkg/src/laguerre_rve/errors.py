"""Exception types shared across the package."""


class LaguerreRveError(Exception):
    """Base class for all package-specific failures."""


class EmptyCellError(LaguerreRveError):
    """An operation that needs a nonempty cell met one with zero volume."""


class DegeneratePairError(LaguerreRveError):
    """Two generator points coincide; no radical plane exists."""


class SecurityCheckError(LaguerreRveError):
    """A cell may be cut by a lattice image outside the searched shells."""


class SolverError(LaguerreRveError):
    """Base class for damped-Newton failures."""


class InfeasibleStartError(SolverError):
    """The initial weights produce at least one empty Laguerre cell."""


class LineSearchError(SolverError):
    """Backtracking exceeded the configured cap without an acceptable step."""


class MaxIterationsError(SolverError):
    """The Newton loop hit its iteration cap before reaching tolerance."""


class SingularHessianError(SolverError):
    """The reduced Hessian solve could not reach the residual target."""
