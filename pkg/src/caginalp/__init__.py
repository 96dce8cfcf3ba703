"""Spectral-Galerkin solver and adjoint-based optimal control for a fractional
phase-field system of Caginalp type."""

__version__ = "0.1.0"

from .control import (
    BoxConstraints,
    ControlProblem,
    ControlSpace,
    OptimizationResult,
    OptimizerOptions,
    project_admissible,
    projected_gradient,
    solve_obstacle_deep_quench,
    stationarity_residual,
)
from .cost import CostSpec, evaluate_cost
from .estimator import PhaseFieldControl
from .forward import (
    InitialData,
    SolverParams,
    StateProblem,
    TimeGrid,
    solve_state,
    solve_state_moreau_yosida,
)
from .potentials import LatentHeatSpec, PotentialSpec
from .sensitivity import (
    reduced_gradient,
    solve_adjoint,
    solve_discrete_adjoint,
    solve_linearized,
)
from .spectral import (
    DomainSpec,
    FractionalParams,
    SpectralField,
    build_basis,
    from_grid,
    to_grid,
)

__all__ = [
    "BoxConstraints",
    "ControlProblem",
    "ControlSpace",
    "CostSpec",
    "DomainSpec",
    "FractionalParams",
    "InitialData",
    "LatentHeatSpec",
    "OptimizationResult",
    "OptimizerOptions",
    "PhaseFieldControl",
    "PotentialSpec",
    "SolverParams",
    "SpectralField",
    "StateProblem",
    "TimeGrid",
    "build_basis",
    "evaluate_cost",
    "from_grid",
    "project_admissible",
    "projected_gradient",
    "reduced_gradient",
    "solve_adjoint",
    "solve_discrete_adjoint",
    "solve_linearized",
    "solve_obstacle_deep_quench",
    "solve_state",
    "solve_state_moreau_yosida",
    "stationarity_residual",
    "to_grid",
]
