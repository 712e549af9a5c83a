"""Viscous Cahn-Hilliard-Keller-Segel tumor growth with adjoint-based optimal control."""
from .control import (
    ControlProblem,
    CostBreakdown,
    OptimizationReport,
    OptimizerConfig,
    ReducedCost,
    cost_eval,
    optimize,
    project_admissible,
    reduced_gradient,
    stationarity_residual,
)
from .core import GammaSource, Grid2D, LogPotential, ModelParams, read_chks1, write_chks1
from .operators import SolverError, chemotaxis_div, laplacian_neumann
from .sensitivity import solve_adjoint, solve_tangent
from .state import InitialData, Model, StateTrajectory, solve_state, step_state

__version__ = "0.1.0"

__all__ = [
    "ControlProblem", "CostBreakdown", "GammaSource", "Grid2D", "InitialData", "LogPotential",
    "Model", "ModelParams", "OptimizationReport", "OptimizerConfig", "ReducedCost",
    "SolverError", "StateTrajectory", "chemotaxis_div", "cost_eval", "laplacian_neumann",
    "optimize", "project_admissible", "read_chks1", "reduced_gradient", "solve_adjoint",
    "solve_state", "solve_tangent", "stationarity_residual", "step_state", "write_chks1",
]
