"""Augmented-Lagrangian design optimization with a projected-gradient inner step.

Inequality functionals c_j(a) <= 0 enter through the PHR form

    phi(a) = Phi(a) + 1/(2 rho) sum_j [max(0, lam_j + rho c_j(a))^2 - lam_j^2]

whose gradient is D Phi + sum_j max(0, lam_j + rho c_j) D c_j.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .adjoint import (
    ADJOINT,
    FINITE_DIFFERENCE,
    METHODS,
    SystemFactory,
    adjoint_gradients,
    direct_differentiation_gradients,
    finite_difference_gradients,
)
from .assembly import assemble
from .errors import ConfigurationError, ModelError, NumericalError
from .integrator import ProgressCallback, simulate
from .model import DesignSpace, ModelDefinition, OptSettings, TermSpec, design_space
from .objective import ObjectiveSpec

logger = logging.getLogger(__name__)

# Bounds at or beyond this magnitude count as open.
OPEN_BOUND = 1e299

CONVERGED = "converged"
MAX_ITERS = "max_iters"
ABORTED = "aborted"


def _constraint_label(term: TermSpec) -> str:
    return f"{term.kind}:{term.body}" if term.body else term.kind


@dataclass(frozen=True, eq=False)
class OptProblem:
    factory: SystemFactory
    objective: ObjectiveSpec
    space: DesignSpace
    constraints: Tuple[Tuple[str, ObjectiveSpec], ...] = ()
    settings: OptSettings = field(default_factory=OptSettings)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.space.size == 0:
            raise ConfigurationError("optimization needs at least one design variable")
        if np.any(self.space.lower > self.space.upper):
            raise ConfigurationError("empty design box: some lb exceeds its ub")
        if self.settings.gradient not in METHODS:
            raise ConfigurationError(f"unknown gradient method {self.settings.gradient!r}")

    @classmethod
    def from_model(cls, model: ModelDefinition, workers: int = 1) -> "OptProblem":
        if model.optimization is None:
            raise ConfigurationError("model has no 'optimization' section")
        if not model.objective:
            raise ConfigurationError("model has no objective terms to optimize")
        return cls(
            factory=lambda a: assemble(model, a),
            objective=ObjectiveSpec.from_terms(model.objective),
            space=design_space(model),
            constraints=tuple(
                (_constraint_label(term), ObjectiveSpec.from_terms([term]))
                for term in model.optimization.constraints
            ),
            settings=model.optimization,
            workers=workers,
        )

    @property
    def widths(self) -> np.ndarray:
        """Finite bound widths; open or degenerate boxes scale by 1."""
        width = self.space.upper - self.space.lower
        open_box = (np.abs(self.space.lower) >= OPEN_BOUND) | (np.abs(self.space.upper) >= OPEN_BOUND)
        return np.where(open_box | (width <= 0.0), 1.0, width)


@dataclass(frozen=True, eq=False)
class Evaluation:
    a: np.ndarray
    phi: float
    gradient: np.ndarray
    constraint_values: np.ndarray
    constraint_gradients: np.ndarray

    @property
    def max_violation(self) -> float:
        if self.constraint_values.size == 0:
            return 0.0
        return float(max(0.0, np.max(self.constraint_values)))


@dataclass(frozen=True, eq=False)
class OptimizationRecord:
    iteration: int
    phi: float
    augmented_before: float
    augmented_after: float
    grad_norm: float
    max_violation: float
    step: float
    accepted: bool
    a: np.ndarray
    multipliers: np.ndarray
    penalty: float


@dataclass(eq=False)
class OptimizationHistory:
    variable_ids: Tuple[str, ...]
    records: List[OptimizationRecord] = field(default_factory=list)
    status: str = MAX_ITERS
    message: str = ""

    @property
    def final_design(self) -> np.ndarray:
        return self.records[-1].a

    @property
    def phi_values(self) -> np.ndarray:
        return np.array([record.phi for record in self.records])


def evaluate_design(problem: OptProblem, a: np.ndarray) -> Evaluation:
    """Objective, constraint functionals and their gradients in one forward pass."""
    specs = [problem.objective] + [spec for _, spec in problem.constraints]
    method = problem.settings.gradient
    if method == FINITE_DIFFERENCE:
        reports = finite_difference_gradients(problem.factory, specs, a, workers=problem.workers)
        failed = {name: msg for report in reports for name, msg in report.failures.items()}
        if failed:
            name, message = next(iter(failed.items()))
            raise ModelError(f"finite-difference gradient unavailable for {name}: {message}")
    else:
        system = problem.factory(a)
        traj = simulate(system)
        if method == ADJOINT:
            reports = adjoint_gradients(traj, specs, system)
        else:
            reports = direct_differentiation_gradients(system, traj, specs)
    count = len(problem.constraints)
    return Evaluation(
        a=np.array(a, dtype=float),
        phi=reports[0].value,
        gradient=reports[0].gradient,
        constraint_values=np.array([report.value for report in reports[1:]]),
        constraint_gradients=np.array([report.gradient for report in reports[1:]]).reshape(
            count, a.size
        ),
    )


def augmented_value(evaluation: Evaluation, multipliers: np.ndarray, penalty: float) -> Tuple[float, np.ndarray]:
    shifted = np.maximum(0.0, multipliers + penalty * evaluation.constraint_values)
    value = evaluation.phi + float(np.sum(shifted**2 - multipliers**2)) / (2.0 * penalty)
    gradient = evaluation.gradient + shifted @ evaluation.constraint_gradients
    return value, gradient


def augmented_objective(
    problem: OptProblem, a: Sequence[float], multipliers: np.ndarray, penalty: float
) -> Tuple[float, np.ndarray]:
    a = np.asarray(a, dtype=float)
    return augmented_value(evaluate_design(problem, a), np.asarray(multipliers, dtype=float), penalty)


def scaled_direction(gradient: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Width^2-scaled gradient normalised so the largest move is one bound width per unit step."""
    scaled = widths * gradient
    norm = float(np.max(np.abs(scaled))) if scaled.size else 0.0
    if norm == 0.0 or not np.isfinite(norm):
        return np.zeros_like(gradient)
    return widths * scaled / norm


def descent_step(
    a: np.ndarray, direction: np.ndarray, step: float, lower: np.ndarray, upper: np.ndarray
) -> np.ndarray:
    if step <= 0.0:
        raise ValueError("step size must be positive")
    return np.clip(a - step * direction, lower, upper)


def should_stop(improvements: Sequence[float], tolerance: float, patience: int) -> bool:
    """True once the last ``patience`` improvements all fall below ``tolerance``."""
    if patience <= 0 or len(improvements) < patience:
        return False
    return all(value < tolerance for value in improvements[-patience:])


def update_multipliers(
    multipliers: np.ndarray,
    penalty: float,
    evaluation: Evaluation,
    previous_violation: Optional[float],
) -> Tuple[np.ndarray, float]:
    multipliers = np.maximum(0.0, multipliers + penalty * evaluation.constraint_values)
    violation = evaluation.max_violation
    if previous_violation is not None and violation > 0.5 * previous_violation:
        penalty = min(penalty * config.OPT_PENALTY_GROWTH, config.OPT_MAX_PENALTY)
    return multipliers, penalty


def _notify(progress_callback: Optional[ProgressCallback], message: str) -> None:
    if progress_callback is None:
        return
    try:
        progress_callback(message)
    except Exception:
        logger.debug("Progress callback raised; ignoring.", exc_info=True)


def optimize(
    problem: OptProblem,
    initial: Optional[Sequence[float]] = None,
    progress_callback: Optional[ProgressCallback] = None,
    on_record: Optional[Callable[[OptimizationHistory], None]] = None,
) -> OptimizationHistory:
    space, settings = problem.space, problem.settings
    a = np.array(space.initial if initial is None else initial, dtype=float)
    if np.any(a < space.lower) or np.any(a > space.upper):
        raise ConfigurationError("initial design lies outside the design box")
    multipliers = np.zeros(len(problem.constraints))
    penalty = config.OPT_INITIAL_PENALTY
    history = OptimizationHistory(variable_ids=space.ids)
    widths = problem.widths
    started = time.perf_counter()

    def record(**values) -> None:
        history.records.append(
            OptimizationRecord(a=a.copy(), multipliers=multipliers.copy(), penalty=penalty, **values)
        )
        if on_record is not None:
            on_record(history)

    current = evaluate_design(problem, a)
    value, gradient = augmented_value(current, multipliers, penalty)
    record(
        iteration=0,
        phi=current.phi,
        augmented_before=value,
        augmented_after=value,
        grad_norm=float(np.max(np.abs(gradient))),
        max_violation=current.max_violation,
        step=0.0,
        accepted=True,
    )
    improvements: List[float] = []
    previous_violation: Optional[float] = None
    if settings.max_iters == 0:
        history.status = MAX_ITERS
        return history

    for iteration in range(1, settings.max_iters + 1):
        direction = scaled_direction(gradient, widths)
        step = settings.initial_step
        accepted = False
        simulated = False
        trial_eval: Optional[Evaluation] = None
        trial_value = value
        if np.any(direction):
            for _ in range(config.OPT_MAX_BACKTRACKS + 1):
                trial = descent_step(a, direction, step, space.lower, space.upper)
                if np.array_equal(trial, a):
                    simulated = True
                    break
                try:
                    candidate = evaluate_design(problem, trial)
                except (NumericalError, ModelError) as exc:
                    logger.warning("Trial design rejected at step %.3e: %s", step, exc)
                    step *= config.OPT_BACKTRACK_FACTOR
                    continue
                simulated = True
                candidate_value, _ = augmented_value(candidate, multipliers, penalty)
                if candidate_value < value:
                    trial_eval, trial_value, accepted = candidate, candidate_value, True
                    break
                step *= config.OPT_BACKTRACK_FACTOR
        else:
            simulated = True

        if not simulated:
            history.status = ABORTED
            history.message = f"every trial design failed to simulate at iteration {iteration}"
            logger.error(history.message)
            record(
                iteration=iteration,
                phi=current.phi,
                augmented_before=value,
                augmented_after=value,
                grad_norm=float(np.max(np.abs(gradient))),
                max_violation=current.max_violation,
                step=0.0,
                accepted=False,
            )
            break

        value_before = value
        if accepted:
            improvements.append(current.phi - trial_eval.phi)
            a, current = trial_eval.a, trial_eval
        else:
            # stalls count toward patience only without constraints
            if not problem.constraints:
                improvements.append(0.0)
            step = 0.0
        value, gradient = augmented_value(current, multipliers, penalty)
        record(
            iteration=iteration,
            phi=current.phi,
            augmented_before=value_before,
            augmented_after=trial_value if accepted else value_before,
            grad_norm=float(np.max(np.abs(gradient))),
            max_violation=current.max_violation,
            step=step,
            accepted=accepted,
        )
        _notify(
            progress_callback,
            f"iteration {iteration}: phi={current.phi:.6e} step={step:.3e} "
            f"{'accepted' if accepted else 'stalled'}",
        )

        inner_done = not accepted or value_before - trial_value < settings.tolerance
        if problem.constraints and inner_done:
            multipliers, penalty = update_multipliers(multipliers, penalty, current, previous_violation)
            previous_violation = current.max_violation
            value, gradient = augmented_value(current, multipliers, penalty)

        if should_stop(improvements, settings.tolerance, settings.patience):
            history.status = CONVERGED
            break
    else:
        history.status = MAX_ITERS

    logger.info(
        "Optimization %s after %d iteration(s), phi %.6e -> %.6e, %.2fs",
        history.status,
        history.records[-1].iteration,
        history.records[0].phi,
        history.records[-1].phi,
        time.perf_counter() - started,
    )
    return history
