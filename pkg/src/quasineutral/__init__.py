"""Doping-profile optimization for the nonlocal Poisson equation and its quasi-neutral limit."""
from .adjoint import AdjointSolution, TrackingTargets, solve_adjoint
from .errors import (
    ConfigError,
    ConvergenceError,
    IncompatibleRHSError,
    InadmissibleProfileError,
    LineSearchError,
    QuasineutralError,
    SolverError,
)
from .experiments import ExperimentSpec, SweepRow, canonical_profile, emit_figures, run_sweep
from .fem import AssembledForms, Mesh1D, assemble
from .kernels import BACKEND, available_backends, use_backend
from .objective import CostBreakdown, DesignProblem, Evaluation, GradientField
from .optimize import OptimizerConfig, OptRun, optimize
from .state import DopingProfile, StateSolution, solve_state

__version__ = "0.1.0"

__all__ = [
    "AdjointSolution", "AssembledForms", "BACKEND", "ConfigError", "ConvergenceError",
    "CostBreakdown", "DesignProblem", "DopingProfile", "Evaluation", "ExperimentSpec",
    "GradientField", "IncompatibleRHSError", "InadmissibleProfileError", "LineSearchError",
    "Mesh1D", "OptRun", "OptimizerConfig", "QuasineutralError", "SolverError",
    "StateSolution", "SweepRow", "TrackingTargets", "assemble", "available_backends",
    "canonical_profile", "emit_figures", "optimize", "run_sweep", "solve_adjoint",
    "solve_state", "use_backend",
]
