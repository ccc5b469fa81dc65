"""Design sensitivities: discrete adjoint, direct differentiation and finite differences.

Step n of the forward pass solves R_n = [c_n; g(q_{n+1}, t_{n+1})] = 0 for
x_n = [q_{n+1}; lam_n] with Jacobian J_n. The adjoint pair (mu_{k-1}, eta_k) is
the solution of

    J_{k-1}^T [mu_{k-1}; eta_k] = [dPhi/dq_k - (dc_k/dq_k)^T mu_k
                                   - (dc_{k+1}/dq_k)^T mu_{k+1}; dPhi/dlam_{k-1}]

for k = N..1 with mu_N = mu_{N+1} = 0.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .assembly import AssembledSystem
from .errors import ModelError, NumericalError
from .integrator import ProgressCallback, SolverSettings, Trajectory, factorize, simulate, solve
from .objective import ObjectiveSpec, Partials

logger = logging.getLogger(__name__)

ADJOINT = "adjoint"
DIRECT = "direct"
FINITE_DIFFERENCE = "fd"
METHODS = (ADJOINT, DIRECT, FINITE_DIFFERENCE)

SystemFactory = Callable[[np.ndarray], AssembledSystem]


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    """mu[n] pairs with c_n (n = 0..N-1); eta[k-1] pairs with g(q_k) (k = 1..N)."""

    mu: np.ndarray
    eta: np.ndarray


@dataclass(frozen=True, eq=False)
class DirectSolution:
    dq: np.ndarray
    dlam: np.ndarray


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    method: str
    variable_ids: Tuple[str, ...]
    value: float
    gradient: np.ndarray
    term_explicit: np.ndarray
    term_mu: np.ndarray
    term_eta: np.ndarray
    term_q0: np.ndarray
    term_qdot0: np.ndarray
    failures: Dict[str, str] = field(default_factory=dict)

    def breakdown_residual(self) -> float:
        total = self.term_explicit + self.term_mu + self.term_eta + self.term_q0 + self.term_qdot0
        finite = np.isfinite(self.gradient)
        if not np.any(finite):
            return 0.0
        return float(np.max(np.abs(total[finite] - self.gradient[finite])))

    def rows(self) -> List[Dict[str, object]]:
        return [
            {
                "variable_id": variable,
                "method": self.method,
                "gradient": float(self.gradient[i]),
                "term_explicit": float(self.term_explicit[i]),
                "term_mu": float(self.term_mu[i]),
                "term_eta": float(self.term_eta[i]),
                "term_q0": float(self.term_q0[i]),
                "term_qdot0": float(self.term_qdot0[i]),
            }
            for i, variable in enumerate(self.variable_ids)
        ]


class _StepBlocks:
    """Partial-derivative blocks of the step residuals along one trajectory."""

    def __init__(self, system: AssembledSystem, traj: Trajectory) -> None:
        self.system = system
        self.traj = traj
        self.h = traj.h
        self.alpha = traj.alpha
        self.m = system.dof_count
        self.l = system.constraint_count
        self._stiffness: Dict[int, np.ndarray] = {}
        self._jacobians: Dict[int, np.ndarray] = {}
        self._design: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self.has_mass_rate = bool(np.any(system.mass_rate))
        self.has_damping_rate = bool(np.any(system.damping_rate))

    @staticmethod
    def _remember(cache: Dict, key: int, value, size: int = 3):
        if len(cache) >= size:
            cache.pop(next(iter(cache)))
        cache[key] = value
        return value

    def stiffness(self, j: int) -> np.ndarray:
        if j in self._stiffness:
            return self._stiffness[j]
        return self._remember(
            self._stiffness, j, self.system.potential_hessian(self.traj.midpoint(j))
        )

    def constraint_jacobian(self, k: int) -> np.ndarray:
        if k in self._jacobians:
            return self._jacobians[k]
        return self._remember(
            self._jacobians, k, self.system.constraints.jacobian(self.traj.q[k])
        )

    # d p-_j / d q_{j+1}, d p-_j / d q_j, d p+_j / d q_{j+1}, d p+_j / d q_j
    def left_next(self, j: int) -> np.ndarray:
        h, a = self.h, self.alpha
        s = self.system
        return s.mass / h + h * a * (1.0 - a) * self.stiffness(j) + (1.0 - a) * s.damping

    def left_same(self, j: int) -> np.ndarray:
        h, a = self.h, self.alpha
        s = self.system
        return -s.mass / h + h * (1.0 - a) ** 2 * self.stiffness(j) - (1.0 - a) * s.damping

    def right_next(self, j: int) -> np.ndarray:
        h, a = self.h, self.alpha
        s = self.system
        return s.mass / h - h * a * a * self.stiffness(j) - a * s.damping

    def right_same(self, j: int) -> np.ndarray:
        h, a = self.h, self.alpha
        s = self.system
        return -s.mass / h - h * a * (1.0 - a) * self.stiffness(j) + a * s.damping

    def multiplier_term(self, n: int) -> np.ndarray:
        if self.l == 0:
            return np.zeros((self.m, self.m))
        return 0.5 * self.h * self.system.constraints.multiplier_hessian(self.traj.lam[n])

    def dc_dq_same(self, n: int) -> np.ndarray:
        if n == 0:
            return self.left_same(0) + self.multiplier_term(0)
        return self.right_next(n - 1) - self.left_same(n) - self.multiplier_term(n)

    def dc_dq_prev(self, n: int) -> np.ndarray:
        return self.right_same(n - 1)

    def step_jacobian(self, n: int) -> np.ndarray:
        m, l = self.m, self.l
        jac = np.zeros((m + l, m + l))
        sign = 1.0 if n == 0 else -1.0
        jac[:m, :m] = sign * self.left_next(n)
        if l:
            jac[:m, m:] = sign * 0.5 * self.h * self.constraint_jacobian(n).T
            jac[m:, :m] = self.constraint_jacobian(n + 1)
        return jac

    def interval_design(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Explicit design partials (dp-_j/da, dp+_j/da), each m x n_a."""
        if j in self._design:
            return self._design[j]
        s, h, a = self.system, self.h, self.alpha
        q = self.traj.q
        delta = q[j + 1] - q[j]
        explicit = s.potential_design_gradient(self.traj.midpoint(j))
        inertia = np.zeros_like(explicit)
        damping = np.zeros_like(explicit)
        if self.has_mass_rate:
            inertia = np.einsum("imk,k->mi", s.mass_rate, delta / h)
        if self.has_damping_rate:
            damping = np.einsum("imk,k->mi", s.damping_rate, delta)
        left = inertia + h * (1.0 - a) * explicit + (1.0 - a) * damping
        right = inertia - h * a * explicit - a * damping
        return self._remember(self._design, j, (left, right))

    def dc_da(self, n: int) -> np.ndarray:
        s = self.system
        if n == 0:
            left, _ = self.interval_design(0)
            out = left.copy()
            if self.has_mass_rate:
                out -= np.einsum("imk,k->mi", s.mass_rate, self.traj.qdot0)
            if self.l:
                out += 0.5 * self.h * s.constraints.design_jacobian_product(self.traj.lam[0])
            return out
        _, right = self.interval_design(n - 1)
        left, _ = self.interval_design(n)
        out = right - left
        if self.l:
            out -= 0.5 * self.h * s.constraints.design_jacobian_product(self.traj.lam[n])
        return out

    def dg_da(self, k: int) -> np.ndarray:
        return self.system.constraints.design_derivative(self.traj.q[k])


def objective_eval(traj: Trajectory, spec: ObjectiveSpec, system: AssembledSystem) -> float:
    return spec.evaluate(traj, system)


def objective_partials(traj: Trajectory, spec: ObjectiveSpec, system: AssembledSystem) -> Partials:
    return spec.partials(traj, system)


def backward_sweep(
    traj: Trajectory,
    partials: Union[Partials, Sequence[Partials]],
    system: AssembledSystem,
) -> Union[AdjointSolution, List[AdjointSolution]]:
    """Solve the adjoint recursion backward; several functionals share one sweep."""
    single = isinstance(partials, Partials)
    stack = [partials] if single else list(partials)
    blocks = _StepBlocks(system, traj)
    count, m, l = traj.step_count, blocks.m, blocks.l
    functionals = len(stack)
    dq = np.stack([p.dq for p in stack])
    dlam = np.stack([p.dlam for p in stack])
    mu = np.zeros((functionals, count, m))
    eta = np.zeros((functionals, count, l))
    started = time.perf_counter()

    for k in range(count, 0, -1):
        rhs_q = dq[:, k].T.copy()
        if k <= count - 1:
            rhs_q -= blocks.dc_dq_same(k).T @ mu[:, k].T
        if k + 1 <= count - 1:
            rhs_q -= blocks.dc_dq_prev(k + 1).T @ mu[:, k + 1].T
        rhs = np.vstack([rhs_q, dlam[:, k - 1].T])
        factors = factorize(blocks.step_jacobian(k - 1), step=k - 1)
        solution = solve(factors, rhs, transpose=True)
        mu[:, k - 1] = solution[:m].T
        eta[:, k - 1] = solution[m:].T

    logger.info(
        "Backward sweep: %d steps, %d functional(s), %.2fs",
        count,
        functionals,
        time.perf_counter() - started,
    )
    solutions = [AdjointSolution(mu=mu[f], eta=eta[f]) for f in range(functionals)]
    return solutions[0] if single else solutions


def initial_condition_sensitivities(
    system: AssembledSystem, index: Optional[int] = None, tolerance: float = 1e-8
) -> Tuple[np.ndarray, np.ndarray]:
    """dq0/da and dqdot0/da (one column when ``index`` is given).

    Both come from the assembled geometry and velocity field; the differentiated
    position and tangency equations are checked and a violation raises ModelError.
    """
    dq0, dqdot0 = system.dq0_da, system.dqdot0_da
    constraints = system.constraints
    if constraints.count and system.design_count:
        q0, qdot0 = system.q0, system.qdot0
        jac = constraints.jacobian(q0)
        position = constraints.design_derivative(q0) + jac @ dq0
        tangency = (
            constraints.design_derivative(qdot0)
            + constraints.target_rate
            + constraints.jacobian_hessian_contract(qdot0) @ dq0
            + jac @ dqdot0
        )
        scale = max(1.0, float(np.max(np.abs(jac))))
        for label, residual in (("position", position), ("tangency", tangency)):
            worst = np.max(np.abs(residual), axis=0)
            for i in np.flatnonzero(worst > tolerance * scale):
                raise ModelError(
                    f"design variable {system.design_ids[i]!r} breaks the differentiated "
                    f"{label} constraint (residual {worst[i]:.3e})"
                )
    if index is None:
        return dq0, dqdot0
    return dq0[:, index], dqdot0[:, index]


def _reports_from_terms(
    method: str,
    system: AssembledSystem,
    values: Sequence[float],
    explicit: np.ndarray,
    term_mu: np.ndarray,
    term_eta: np.ndarray,
    term_q0: np.ndarray,
    term_qdot0: np.ndarray,
) -> List[SensitivityReport]:
    reports = []
    for f, value in enumerate(values):
        gradient = explicit[f] + term_mu[f] + term_eta[f] + term_q0[f] + term_qdot0[f]
        reports.append(
            SensitivityReport(
                method=method,
                variable_ids=system.design_ids,
                value=float(value),
                gradient=gradient,
                term_explicit=explicit[f].copy(),
                term_mu=term_mu[f].copy(),
                term_eta=term_eta[f].copy(),
                term_q0=term_q0[f].copy(),
                term_qdot0=term_qdot0[f].copy(),
            )
        )
    return reports


def assemble_gradient(
    traj: Trajectory,
    adjoint: Union[AdjointSolution, Sequence[AdjointSolution]],
    partials: Union[Partials, Sequence[Partials]],
    system: AssembledSystem,
    values: Optional[Sequence[float]] = None,
) -> Union[SensitivityReport, List[SensitivityReport]]:
    single = isinstance(partials, Partials)
    partial_list = [partials] if single else list(partials)
    adjoint_list = [adjoint] if single else list(adjoint)
    functionals = len(partial_list)
    values = [np.nan] * functionals if values is None else list(values)
    blocks = _StepBlocks(system, traj)
    count, m, n_a = traj.step_count, blocks.m, system.design_count
    h, alpha = traj.h, traj.alpha
    constraints = system.constraints
    mu = np.stack([adj.mu for adj in adjoint_list])
    eta = np.stack([adj.eta for adj in adjoint_list])

    weights_mass = np.zeros((functionals, m, m))
    weights_damping = np.zeros((functionals, m, m))
    contracted = np.zeros((functionals, n_a))
    for j in range(count):
        left = mu[:, j] if j == 0 else -mu[:, j]
        right = mu[:, j + 1] if j + 1 < count else np.zeros((functionals, m))
        delta = traj.q[j + 1] - traj.q[j]
        explicit = system.potential_design_gradient(traj.midpoint(j))
        contracted += (h * (1.0 - alpha) * left - h * alpha * right) @ explicit
        if blocks.has_mass_rate:
            weights_mass += np.einsum("fm,k->fmk", left + right, delta / h)
        if blocks.has_damping_rate:
            weights_damping += np.einsum("fm,k->fmk", (1.0 - alpha) * left - alpha * right, delta)
    if blocks.has_mass_rate:
        weights_mass -= np.einsum("fm,k->fmk", mu[:, 0], traj.qdot0)
        contracted += np.einsum("fmk,imk->fi", weights_mass, system.mass_rate)
    if blocks.has_damping_rate:
        contracted += np.einsum("fmk,imk->fi", weights_damping, system.damping_rate)
    if constraints.count:
        signs = -np.ones(count)
        signs[0] = 1.0
        signed_lam = signs[:, None] * traj.lam
        for f in range(functionals):
            contracted[f] += 0.5 * h * constraints.design_bilinear(signed_lam, mu[f])
    term_mu = -contracted

    term_eta = np.zeros((functionals, n_a))
    if constraints.count:
        for f in range(functionals):
            term_eta[f] = -(
                constraints.design_bilinear(eta[f], traj.q[1:])
                - eta[f].sum(axis=0) @ constraints.target_rate
            )

    dq0, dqdot0 = initial_condition_sensitivities(system)
    state0 = np.stack([p.dq[0] for p in partial_list]).T - blocks.dc_dq_same(0).T @ mu[:, 0].T
    if count >= 2:
        state0 -= blocks.dc_dq_prev(1).T @ mu[:, 1].T
    term_q0 = (dq0.T @ state0).T
    rate0 = np.stack([p.dqdot0 for p in partial_list]).T + system.mass.T @ mu[:, 0].T
    term_qdot0 = (dqdot0.T @ rate0).T
    explicit = np.stack([p.da for p in partial_list])

    reports = _reports_from_terms(
        ADJOINT, system, values, explicit, term_mu, term_eta, term_q0, term_qdot0
    )
    return reports[0] if single else reports


def adjoint_gradients(
    traj: Trajectory, specs: Sequence[ObjectiveSpec], system: AssembledSystem
) -> List[SensitivityReport]:
    """One backward sweep for all functionals in ``specs``."""
    partials = [objective_partials(traj, spec, system) for spec in specs]
    values = [objective_eval(traj, spec, system) for spec in specs]
    solutions = backward_sweep(traj, partials, system)
    return assemble_gradient(traj, solutions, partials, system, values)


def adjoint_gradient(traj: Trajectory, spec: ObjectiveSpec, system: AssembledSystem) -> SensitivityReport:
    return adjoint_gradients(traj, [spec], system)[0]


def direct_sensitivities(system: AssembledSystem, traj: Trajectory) -> DirectSolution:
    """Forward-propagate dq_n/da and dlam_n/da through the linearised step equations."""
    blocks = _StepBlocks(system, traj)
    count, m, l, n_a = traj.step_count, blocks.m, blocks.l, system.design_count
    dq0, dqdot0 = initial_condition_sensitivities(system)
    dq = np.zeros((count + 1, m, n_a))
    dlam = np.zeros((count, l, n_a))
    dq[0] = dq0
    started = time.perf_counter()
    for n in range(count):
        rhs_c = blocks.dc_da(n) + blocks.dc_dq_same(n) @ dq[n]
        if n == 0:
            rhs_c -= system.mass @ dqdot0
        else:
            rhs_c += blocks.dc_dq_prev(n) @ dq[n - 1]
        rhs = np.vstack([rhs_c, blocks.dg_da(n + 1)])
        solution = solve(factorize(blocks.step_jacobian(n), step=n), -rhs)
        dq[n + 1] = solution[:m]
        dlam[n] = solution[m:]
    logger.info(
        "Direct differentiation pass: %d steps, %d variable(s), %.2fs",
        count,
        n_a,
        time.perf_counter() - started,
    )
    return DirectSolution(dq=dq, dlam=dlam)


def direct_differentiation_gradients(
    system: AssembledSystem, traj: Trajectory, specs: Sequence[ObjectiveSpec]
) -> List[SensitivityReport]:
    states = direct_sensitivities(system, traj)
    dq0, dqdot0 = initial_condition_sensitivities(system)
    functionals = len(specs)
    n_a = system.design_count
    values = []
    explicit = np.zeros((functionals, n_a))
    term_state = np.zeros((functionals, n_a))
    term_q0 = np.zeros((functionals, n_a))
    term_qdot0 = np.zeros((functionals, n_a))
    for f, spec in enumerate(specs):
        partials = objective_partials(traj, spec, system)
        values.append(objective_eval(traj, spec, system))
        explicit[f] = partials.da
        term_state[f] = np.einsum("km,kmi->i", partials.dq[1:], states.dq[1:]) + np.einsum(
            "kl,kli->i", partials.dlam, states.dlam
        )
        term_q0[f] = partials.dq[0] @ dq0
        term_qdot0[f] = partials.dqdot0 @ dqdot0
    return _reports_from_terms(
        DIRECT,
        system,
        values,
        explicit,
        term_state,
        np.zeros((functionals, n_a)),
        term_q0,
        term_qdot0,
    )


def direct_differentiation_gradient(
    system: AssembledSystem, traj: Trajectory, spec: ObjectiveSpec
) -> SensitivityReport:
    return direct_differentiation_gradients(system, traj, [spec])[0]


def _perturbed_values(
    factory: SystemFactory,
    specs: Sequence[ObjectiveSpec],
    a: np.ndarray,
    settings: Optional[SolverSettings],
) -> np.ndarray:
    system = factory(a)
    traj = simulate(system, settings)
    return np.array([spec.evaluate(traj, system) for spec in specs])


def finite_difference_gradients(
    factory: SystemFactory,
    specs: Sequence[ObjectiveSpec],
    a: Sequence[float],
    workers: int = 1,
    settings: Optional[SolverSettings] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[SensitivityReport]:
    """Central differences with step FD_RELATIVE_STEP * (1 + |a_i|), 2 n_a simulations."""
    a = np.asarray(a, dtype=float)
    n_a = a.size
    functionals = len(specs)
    base_system = factory(a)
    base_traj = simulate(base_system, settings)
    values = [spec.evaluate(base_traj, base_system) for spec in specs]
    gradient = np.full((functionals, n_a), np.nan)
    failures: Dict[str, str] = {}
    started = time.perf_counter()

    def column(i: int) -> Tuple[int, Optional[np.ndarray], Optional[str]]:
        step = config.FD_RELATIVE_STEP * (1.0 + abs(a[i]))
        shift = np.zeros(n_a)
        shift[i] = step
        try:
            plus = _perturbed_values(factory, specs, a + shift, settings)
            minus = _perturbed_values(factory, specs, a - shift, settings)
        except (NumericalError, ModelError) as exc:
            return i, None, str(exc)
        return i, (plus - minus) / (2.0 * step), None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for i, derivative, error in pool.map(column, range(n_a)):
            variable = base_system.design_ids[i]
            if error is not None:
                failures[variable] = error
                logger.warning("FD perturbation of %s failed: %s", variable, error)
            else:
                gradient[:, i] = derivative
            if progress_callback is not None:
                try:
                    progress_callback(f"finite differences: {variable} done")
                except Exception:
                    logger.debug("Progress callback raised; ignoring.", exc_info=True)

    logger.info(
        "Finite differences: %d simulations, %.2fs", 1 + 2 * n_a, time.perf_counter() - started
    )
    zeros = np.zeros(n_a)
    return [
        SensitivityReport(
            method=FINITE_DIFFERENCE,
            variable_ids=base_system.design_ids,
            value=float(values[f]),
            gradient=gradient[f],
            term_explicit=gradient[f].copy(),
            term_mu=zeros.copy(),
            term_eta=zeros.copy(),
            term_q0=zeros.copy(),
            term_qdot0=zeros.copy(),
            failures=dict(failures),
        )
        for f in range(functionals)
    ]


def finite_difference_gradient(
    factory: SystemFactory,
    spec: ObjectiveSpec,
    a: Sequence[float],
    workers: int = 1,
    settings: Optional[SolverSettings] = None,
) -> SensitivityReport:
    return finite_difference_gradients(factory, [spec], a, workers, settings)[0]


def relative_error(first: np.ndarray, reference: np.ndarray) -> float:
    """max_i |first_i - reference_i| / max(1, |reference_i|)."""
    diff = np.abs(np.asarray(first) - np.asarray(reference))
    scale = np.maximum(1.0, np.abs(np.asarray(reference)))
    if diff.size == 0:
        return 0.0
    return float(np.max(diff / scale))


def compare_reports(reports: Sequence[SensitivityReport]) -> Dict[str, float]:
    """Pairwise max relative errors, keyed "<method>_vs_<reference method>"."""
    metrics: Dict[str, float] = {}
    for i, first in enumerate(reports):
        for reference in reports[i + 1 :]:
            key = f"{first.method}_vs_{reference.method}"
            metrics[key] = relative_error(first.gradient, reference.gradient)
    return metrics


def sensitivities(
    factory: SystemFactory,
    specs: Sequence[ObjectiveSpec],
    a: Sequence[float],
    method: str = ADJOINT,
    workers: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[SensitivityReport]:
    """Simulate at ``a`` and differentiate every functional with one method."""
    if method not in METHODS:
        raise ValueError(f"unknown sensitivity method {method!r}")
    a = np.asarray(a, dtype=float)
    if method == FINITE_DIFFERENCE:
        return finite_difference_gradients(
            factory, specs, a, workers=workers, progress_callback=progress_callback
        )
    system = factory(a)
    traj = simulate(system, progress_callback=progress_callback)
    if method == ADJOINT:
        return adjoint_gradients(traj, specs, system)
    return direct_differentiation_gradients(system, traj, specs)
