"""Variational time stepping with Newton solves.

Interval j joins q_j and q_{j+1}; its quadrature point is
mid_j = (1 - alpha) q_j + alpha q_{j+1} and its velocity v_j = (q_{j+1} - q_j) / h.
The left and right discrete momenta of interval j are

    p-_j = M v_j + h (1 - alpha) dU(mid_j) + (1 - alpha) C (q_{j+1} - q_j)
    p+_j = M v_j - h alpha dU(mid_j) - alpha C (q_{j+1} - q_j)

and the residuals read

    c_0 = p-_0 + h/2 G(q_0)^T lam_0 - M qdot_0
    c_n = p+_{n-1} - p-_n - h/2 G(q_n)^T lam_n          (n >= 1)

each stacked with g(q_{n+1}, t_{n+1}).
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from . import config
from .assembly import AssembledSystem, validate_initial_conditions
from .errors import ConfigurationError, ConvergenceError, ModelError, NumericalError, SingularSystemError

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str], None]
ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SolverSettings:
    newton_tol: float = config.NEWTON_TOL
    max_newton_iters: int = config.MAX_NEWTON_ITERS
    alpha: float = config.DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not self.newton_tol > 0.0:
            raise ConfigurationError(f"newton_tol must be positive, got {self.newton_tol}")
        if self.max_newton_iters < 1:
            raise ConfigurationError("max_newton_iters must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def for_system(cls, system: AssembledSystem) -> "SolverSettings":
        settings = system.settings
        return cls(
            newton_tol=settings.newton_tol,
            max_newton_iters=settings.max_newton_iters,
            alpha=settings.alpha,
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    h: float
    alpha: float
    q: np.ndarray
    lam: np.ndarray
    qdot0: np.ndarray
    newton_iterations: Optional[np.ndarray] = None

    @property
    def step_count(self) -> int:
        return self.q.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.step_count + 1)

    def velocity(self, j: int) -> np.ndarray:
        return (self.q[j + 1] - self.q[j]) / self.h

    def midpoint(self, j: int) -> np.ndarray:
        return (1.0 - self.alpha) * self.q[j] + self.alpha * self.q[j + 1]


@dataclass(frozen=True, eq=False)
class NewtonResult:
    solution: np.ndarray
    iterations: int
    residual_norm: float


def _inf_norm(vector: np.ndarray) -> float:
    return float(np.max(np.abs(vector))) if vector.size else 0.0


def factorize(matrix: np.ndarray, step: Optional[int] = None):
    """LU factors of a square system; raises SingularSystemError on a tiny pivot."""
    if not np.all(np.isfinite(matrix)):
        raise SingularSystemError("system matrix has non-finite entries", step=step)
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if scale == 0.0:
        raise SingularSystemError("system matrix is zero", step=step)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        factors = lu_factor(matrix, check_finite=False)
    pivot = float(np.min(np.abs(np.diag(factors[0]))))
    if pivot < config.SINGULAR_PIVOT_RATIO * scale:
        raise SingularSystemError(
            f"singular system: pivot {pivot:.3e} below {config.SINGULAR_PIVOT_RATIO:.0e} x scale {scale:.3e}",
            step=step,
        )
    return factors


def solve(factors, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
    return lu_solve(factors, rhs, trans=1 if transpose else 0, check_finite=False)


def _evaluate_at_step(fn: ResidualFn, x: np.ndarray, step: Optional[int]) -> np.ndarray:
    try:
        return fn(x)
    except NumericalError as exc:
        if exc.step is not None or step is None:
            raise
        raise type(exc)(str(exc), step=step) from exc


def newton_solve(
    residual: ResidualFn,
    jacobian: JacobianFn,
    guess: np.ndarray,
    tol: float = config.NEWTON_TOL,
    max_iters: int = config.MAX_NEWTON_ITERS,
    step: Optional[int] = None,
) -> NewtonResult:
    x = np.array(guess, dtype=float)
    norm = np.inf
    for iteration in range(max_iters + 1):
        r = _evaluate_at_step(residual, x, step)
        norm = _inf_norm(r)
        if not np.isfinite(norm):
            raise ConvergenceError("residual became non-finite", step=step)
        if norm <= tol:
            return NewtonResult(solution=x, iterations=iteration, residual_norm=norm)
        if iteration == max_iters:
            break
        x = x - solve(factorize(_evaluate_at_step(jacobian, x, step), step=step), r)
    raise ConvergenceError(
        f"Newton did not converge in {max_iters} iterations (residual {norm:.3e})", step=step
    )


def interval_momenta(
    q_a: np.ndarray, q_b: np.ndarray, system: AssembledSystem, alpha: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right discrete momenta (p-, p+) of the interval [q_a, q_b]."""
    alpha = system.alpha if alpha is None else alpha
    h = system.h
    delta = q_b - q_a
    inertia = system.mass @ delta / h
    grad = system.potential_gradient((1.0 - alpha) * q_a + alpha * q_b)
    damping = system.damping @ delta
    p_minus = inertia + h * (1.0 - alpha) * grad + (1.0 - alpha) * damping
    p_plus = inertia - h * alpha * grad - alpha * damping
    return p_minus, p_plus


def discrete_momenta(traj: Trajectory, system: AssembledSystem) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right momenta of every interval, each N x m."""
    count = traj.step_count
    left = np.zeros((count, system.dof_count))
    right = np.zeros((count, system.dof_count))
    for j in range(count):
        left[j], right[j] = interval_momenta(traj.q[j], traj.q[j + 1], system, traj.alpha)
    return left, right


def residual_initial(
    q0: np.ndarray,
    q1: np.ndarray,
    lambda0: np.ndarray,
    qdot0: np.ndarray,
    system: AssembledSystem,
    alpha: Optional[float] = None,
) -> np.ndarray:
    constraints = system.constraints
    p_minus, _ = interval_momenta(q0, q1, system, alpha)
    dynamic = p_minus - system.mass @ qdot0
    if constraints.count:
        dynamic = dynamic + 0.5 * system.h * constraints.jacobian(q0).T @ lambda0
    return np.concatenate([dynamic, constraints.evaluate(q1, system.h)])


def residual_step(
    q_prev: np.ndarray,
    q_n: np.ndarray,
    q_next: np.ndarray,
    lambda_n: np.ndarray,
    system: AssembledSystem,
    alpha: Optional[float] = None,
    t_next: float = 0.0,
) -> np.ndarray:
    """Step residual; the constraint row is evaluated at ``t_next`` = t_{n+1}."""
    constraints = system.constraints
    _, p_plus = interval_momenta(q_prev, q_n, system, alpha)
    p_minus, _ = interval_momenta(q_n, q_next, system, alpha)
    dynamic = p_plus - p_minus
    if constraints.count:
        dynamic = dynamic - 0.5 * system.h * constraints.jacobian(q_n).T @ lambda_n
    return np.concatenate([dynamic, constraints.evaluate(q_next, t_next)])


def interval_stiffness(q_a: np.ndarray, q_b: np.ndarray, system: AssembledSystem, alpha: float) -> np.ndarray:
    return system.potential_hessian((1.0 - alpha) * q_a + alpha * q_b)


def next_state_block(stiffness: np.ndarray, system: AssembledSystem, alpha: float) -> np.ndarray:
    """d p-_j / d q_{j+1} for the interval with Hessian ``stiffness`` at its midpoint."""
    h = system.h
    return system.mass / h + h * alpha * (1.0 - alpha) * stiffness + (1.0 - alpha) * system.damping


def jacobian_initial(
    q0: np.ndarray, q1: np.ndarray, system: AssembledSystem, alpha: Optional[float] = None
) -> np.ndarray:
    alpha = system.alpha if alpha is None else alpha
    m, count = system.dof_count, system.constraint_count
    jac = np.zeros((m + count, m + count))
    jac[:m, :m] = next_state_block(interval_stiffness(q0, q1, system, alpha), system, alpha)
    if count:
        jac[:m, m:] = 0.5 * system.h * system.constraints.jacobian(q0).T
        jac[m:, :m] = system.constraints.jacobian(q1)
    return jac


def jacobian_step(
    q_n: np.ndarray,
    q_next: np.ndarray,
    system: AssembledSystem,
    alpha: Optional[float] = None,
    g_n: Optional[np.ndarray] = None,
) -> np.ndarray:
    alpha = system.alpha if alpha is None else alpha
    m, count = system.dof_count, system.constraint_count
    jac = np.zeros((m + count, m + count))
    jac[:m, :m] = -next_state_block(interval_stiffness(q_n, q_next, system, alpha), system, alpha)
    if count:
        g_n = system.constraints.jacobian(q_n) if g_n is None else g_n
        jac[:m, m:] = -0.5 * system.h * g_n.T
        jac[m:, :m] = system.constraints.jacobian(q_next)
    return jac


def _notify(progress_callback: Optional[ProgressCallback], message: str) -> None:
    if progress_callback is None:
        return
    try:
        progress_callback(message)
    except Exception:
        logger.debug("Progress callback raised; ignoring.", exc_info=True)


def simulate(
    system: AssembledSystem,
    settings: Optional[SolverSettings] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> Trajectory:
    report = validate_initial_conditions(system)
    if not report.passed:
        raise ModelError(
            "initial conditions are inconsistent: "
            f"|g(q0)| = {report.g_residual:.3e}, |G qdot0| = {report.gdot_residual:.3e}"
        )
    settings = settings or SolverSettings.for_system(system)
    alpha = settings.alpha
    h = system.h
    count = system.step_count
    duration = system.settings.T
    if abs(count * h - duration) > 1e-9 * max(duration, h):
        logger.warning(
            "T = %.9g is not a multiple of h = %.9g; integrating %d steps to t = %.9g",
            duration,
            h,
            count,
            count * h,
        )
    m, n_lam = system.dof_count, system.constraint_count
    constraints = system.constraints

    q = np.zeros((count + 1, m))
    lam = np.zeros((count, n_lam))
    iterations = np.zeros(count, dtype=int)
    q[0] = system.q0
    started = time.perf_counter()
    milestone = max(1, count // 10)

    def unknowns(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x[:m], x[m:]

    q0, qdot0 = system.q0, system.qdot0
    result = newton_solve(
        lambda x: residual_initial(q0, x[:m], x[m:], qdot0, system, alpha),
        lambda x: jacobian_initial(q0, x[:m], system, alpha),
        np.concatenate([q0 + h * qdot0, np.zeros(n_lam)]),
        tol=settings.newton_tol,
        max_iters=settings.max_newton_iters,
        step=0,
    )
    q[1], lam[0] = unknowns(result.solution)
    iterations[0] = result.iterations

    for n in range(1, count):
        q_prev, q_n = q[n - 1], q[n]
        _, p_plus = interval_momenta(q_prev, q_n, system, alpha)
        g_n = constraints.jacobian(q_n) if n_lam else None
        t_next = (n + 1) * h

        def residual(x: np.ndarray) -> np.ndarray:
            q_next, lam_n = unknowns(x)
            p_minus, _ = interval_momenta(q_n, q_next, system, alpha)
            dynamic = p_plus - p_minus
            if n_lam:
                dynamic = dynamic - 0.5 * h * g_n.T @ lam_n
            return np.concatenate([dynamic, constraints.evaluate(q_next, t_next)])

        result = newton_solve(
            residual,
            lambda x: jacobian_step(q_n, x[:m], system, alpha, g_n),
            np.concatenate([2.0 * q_n - q_prev, lam[n - 1]]),
            tol=settings.newton_tol,
            max_iters=settings.max_newton_iters,
            step=n,
        )
        q[n + 1], lam[n] = unknowns(result.solution)
        iterations[n] = result.iterations
        if n % milestone == 0:
            _notify(progress_callback, f"step {n}/{count}")

    elapsed = time.perf_counter() - started
    logger.info(
        "Forward pass: %d steps, m=%d, l=%d, %d Newton iterations, %.2fs",
        count,
        m,
        n_lam,
        int(iterations.sum()),
        elapsed,
    )
    _notify(progress_callback, f"simulation finished: {count} steps in {elapsed:.2f}s")
    return Trajectory(h=h, alpha=alpha, q=q, lam=lam, qdot0=qdot0.copy(), newton_iterations=iterations)
