"""Flexible multibody simulation, design sensitivities and optimization."""

from .adjoint import (
    AdjointSolution,
    SensitivityReport,
    adjoint_gradient,
    adjoint_gradients,
    assemble_gradient,
    backward_sweep,
    compare_reports,
    direct_differentiation_gradient,
    direct_differentiation_gradients,
    finite_difference_gradient,
    finite_difference_gradients,
    initial_condition_sensitivities,
    objective_eval,
    objective_partials,
    sensitivities,
)
from .assembly import AssembledSystem, assemble, validate_initial_conditions
from .errors import ConfigurationError, ConvergenceError, ModelError, NumericalError, SingularSystemError
from .integrator import SolverSettings, Trajectory, newton_solve, residual_initial, residual_step, simulate
from .model import ModelDefinition, design_space, parse_model, serialize_model, with_design
from .objective import ObjectiveSpec
from .optimizer import OptimizationHistory, OptProblem, augmented_objective, descent_step, optimize

__all__ = [
    "AdjointSolution",
    "AssembledSystem",
    "ConfigurationError",
    "ConvergenceError",
    "ModelDefinition",
    "ModelError",
    "NumericalError",
    "ObjectiveSpec",
    "OptProblem",
    "OptimizationHistory",
    "SensitivityReport",
    "SingularSystemError",
    "SolverSettings",
    "Trajectory",
    "adjoint_gradient",
    "adjoint_gradients",
    "assemble",
    "assemble_gradient",
    "augmented_objective",
    "backward_sweep",
    "compare_reports",
    "descent_step",
    "design_space",
    "direct_differentiation_gradient",
    "direct_differentiation_gradients",
    "finite_difference_gradient",
    "finite_difference_gradients",
    "initial_condition_sensitivities",
    "newton_solve",
    "objective_eval",
    "objective_partials",
    "optimize",
    "parse_model",
    "residual_initial",
    "residual_step",
    "sensitivities",
    "serialize_model",
    "simulate",
    "validate_initial_conditions",
    "with_design",
]
