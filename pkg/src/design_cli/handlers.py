from __future__ import annotations

import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from multibody import export
from multibody.adjoint import (
    ADJOINT,
    DIRECT,
    FINITE_DIFFERENCE,
    SensitivityReport,
    compare_reports,
    sensitivities,
)
from multibody.assembly import assemble, validate_initial_conditions
from multibody.errors import ConfigurationError
from multibody.integrator import simulate
from multibody.model import (
    ModelDefinition,
    check_simulation,
    design_space,
    parse_model,
    serialize_model,
    with_design,
)
from multibody.objective import ObjectiveSpec
from multibody.optimizer import ABORTED, OptimizationHistory, OptProblem, optimize

from . import utils

logger = logging.getLogger(__name__)

ALL_METHODS = "all"
METHOD_CHOICES = (ADJOINT, DIRECT, FINITE_DIFFERENCE, ALL_METHODS)


@dataclass(frozen=True)
class RunConfig:
    command: str
    model_path: Path
    out_dir: Path
    method: str = ADJOINT
    h: Optional[float] = None
    T: Optional[float] = None
    fd_workers: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHOD_CHOICES:
            raise ConfigurationError(f"unknown method {self.method!r}")
        for name in ("h", "T"):
            value = getattr(self, name)
            if value is not None and not value > 0.0:
                raise ConfigurationError(f"--{name} must be positive, got {value}")


def load_model(cfg: RunConfig) -> ModelDefinition:
    if not cfg.model_path.is_file():
        raise FileNotFoundError(f"model file not found: {cfg.model_path}")
    model = parse_model(cfg.model_path.read_text(encoding="utf-8"))
    overrides = {name: getattr(cfg, name) for name in ("h", "T") if getattr(cfg, name) is not None}
    if overrides:
        settings = replace(model.simulation, **overrides)
        check_simulation(settings, "--overrides")
        model = replace(model, simulation=settings)
    return model


def _progress(message: str) -> None:
    logger.debug(message)


def run_simulate(cfg: RunConfig) -> int:
    model = load_model(cfg)
    started = time.perf_counter()
    system = assemble(model)
    traj = simulate(system, progress_callback=_progress)
    wall_time = time.perf_counter() - started
    constraints = system.constraints
    final_residual = 0.0
    if constraints.count:
        final_residual = float(
            np.max(np.abs(constraints.evaluate(traj.q[-1], traj.times[-1])))
        )
    export.write_trajectory_csv(traj, cfg.out_dir / "trajectory.csv")
    utils.write_json(
        cfg.out_dir / "simulation.json",
        {
            "N": traj.step_count,
            "final_constraint_residual": final_residual,
            "wall_time": wall_time,
            "newton_iterations": int(traj.newton_iterations.sum()),
            "dof_count": system.dof_count,
            "constraint_count": system.constraint_count,
        },
    )
    logger.info("Wrote %d trajectory rows to %s", traj.step_count + 1, cfg.out_dir)
    return 0


def _objective_specs(model: ModelDefinition) -> List[ObjectiveSpec]:
    """The total objective first, then each term on its own when there are several."""
    specs = [ObjectiveSpec.from_terms(model.objective)]
    if len(model.objective) > 1:
        specs += [ObjectiveSpec.from_terms([term]) for term in model.objective]
    return specs


def _write_reports(reports: List[SensitivityReport], method: str, out_dir: Path) -> None:
    export.write_sensitivity_csv(reports[:1], out_dir / f"sensitivity_{method}.csv")
    for index, report in enumerate(reports[1:]):
        export.write_sensitivity_csv([report], out_dir / f"sensitivity_{method}_term{index}.csv")


def run_sensitivity(cfg: RunConfig) -> int:
    model = load_model(cfg)
    if not model.design_variables:
        raise ConfigurationError("model declares no design variables; nothing to differentiate")
    if not model.objective:
        raise ConfigurationError("model declares no objective terms")
    space = design_space(model)
    specs = _objective_specs(model)
    methods = (ADJOINT, DIRECT, FINITE_DIFFERENCE) if cfg.method == ALL_METHODS else (cfg.method,)

    def factory(a: np.ndarray):
        return assemble(model, a)

    totals: List[SensitivityReport] = []
    timings = {}
    for method in methods:
        started = time.perf_counter()
        reports = sensitivities(
            factory,
            specs,
            space.initial,
            method=method,
            workers=cfg.fd_workers,
            progress_callback=_progress,
        )
        timings[method] = time.perf_counter() - started
        for variable, message in reports[0].failures.items():
            logger.warning("%s: no finite-difference value (%s)", variable, message)
        _write_reports(reports, method, cfg.out_dir)
        totals.append(reports[0])
        logger.info("%s gradient in %.2fs", method, timings[method])

    if cfg.method == ALL_METHODS:
        utils.write_json(
            cfg.out_dir / "agreement.json",
            {
                "max_relative_error": compare_reports(totals),
                "wall_time": timings,
                "variable_ids": list(space.ids),
            },
        )
    return 0


def run_optimize(cfg: RunConfig) -> int:
    model = load_model(cfg)
    if not model.design_variables:
        raise ConfigurationError("model declares no design variables; nothing to optimize")
    problem = OptProblem.from_model(model, workers=cfg.fd_workers)
    latest: List[OptimizationHistory] = []

    def keep(history: OptimizationHistory) -> None:
        if not latest:
            latest.append(history)

    try:
        history = optimize(problem, progress_callback=_progress, on_record=keep)
    finally:
        if latest and latest[0].records:
            export.write_history_csv(latest[0], cfg.out_dir / "history.csv")

    optimized = with_design(model, history.final_design)
    utils.write_text(cfg.out_dir / "optimized_model.json", serialize_model(optimized))
    utils.write_json(
        cfg.out_dir / "optimization.json",
        {
            "status": history.status,
            "message": history.message,
            "iterations": history.records[-1].iteration,
            "phi_initial": history.records[0].phi,
            "phi_final": history.records[-1].phi,
            "design": dict(zip(history.variable_ids, history.final_design.tolist())),
        },
    )
    if history.status == ABORTED:
        logger.error("Optimization aborted: %s", history.message)
        return 4
    return 0


def run_validate(cfg: RunConfig) -> int:
    model = load_model(cfg)
    report = validate_initial_conditions(assemble(model))
    utils.write_json(cfg.out_dir / "validation.json", report.to_dict())
    sys.stdout.write(report.to_text() + "\n")
    return 0 if report.passed else 2
