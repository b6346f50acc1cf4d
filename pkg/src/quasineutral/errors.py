"""Exception hierarchy shared by the solvers and the CLI."""


class QuasineutralError(Exception):
    """Base class for all package errors."""


class ConfigError(QuasineutralError, ValueError):
    """Invalid parameter or configuration value."""


class SolverError(QuasineutralError, RuntimeError):
    """A numerical solve failed.

    ``history`` carries whatever convergence record the solver produced
    before giving up (residuals, step norms, contraction ratios).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConvergenceError(SolverError):
    """Iteration cap reached without meeting the stopping criterion."""


class IncompatibleRHSError(SolverError):
    """Right-hand side violates the solvability condition of a singular operator."""


class InadmissibleProfileError(SolverError):
    """Doping profile yields non-positive total charges N or P."""


class LineSearchError(SolverError):
    """Armijo backtracking exhausted without an acceptable step."""
