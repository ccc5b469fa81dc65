"""CSV writers for trajectories, sensitivity reports and optimization histories."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List, Sequence

from . import config
from .adjoint import SensitivityReport
from .integrator import Trajectory
from .optimizer import OptimizationHistory

SENSITIVITY_COLUMNS = (
    "variable_id",
    "method",
    "gradient",
    "term_explicit",
    "term_mu",
    "term_eta",
    "term_q0",
    "term_qdot0",
)
HISTORY_COLUMNS = ("iter", "phi", "grad_norm", "max_violation", "step", "accepted")
HISTORY_EXTRA_COLUMNS = ("augmented_before", "augmented_after", "penalty")


def _fmt(value: float) -> str:
    return config.CSV_FLOAT_FORMAT % value


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    with temp_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    temp_path.replace(path)
    return path


def trajectory_header(dof_count: int, constraint_count: int) -> List[str]:
    return (
        ["t"]
        + [f"q_{i}" for i in range(dof_count)]
        + [f"lambda_{i}" for i in range(constraint_count)]
    )


def write_trajectory_csv(traj: Trajectory, path: Path) -> Path:
    """One row per stored step; lambda_N does not exist so the last row leaves it blank."""
    count = traj.step_count
    dof_count = traj.q.shape[1]
    constraint_count = traj.lam.shape[1] if traj.lam.ndim == 2 else 0
    times = traj.times

    def rows():
        for n in range(count + 1):
            row = [_fmt(times[n])] + [_fmt(value) for value in traj.q[n]]
            if n < count:
                row += [_fmt(value) for value in traj.lam[n]]
            else:
                row += [""] * constraint_count
            yield row

    return _write_rows(path, trajectory_header(dof_count, constraint_count), rows())


def write_sensitivity_csv(reports: Sequence[SensitivityReport], path: Path) -> Path:
    def rows():
        for report in reports:
            for row in report.rows():
                yield [
                    row["variable_id"],
                    row["method"],
                    *(_fmt(row[column]) for column in SENSITIVITY_COLUMNS[2:]),
                ]

    return _write_rows(path, SENSITIVITY_COLUMNS, rows())


def write_history_csv(history: OptimizationHistory, path: Path) -> Path:
    header = (
        list(HISTORY_COLUMNS)
        + [f"a_{i}" for i in range(len(history.variable_ids))]
        + list(HISTORY_EXTRA_COLUMNS)
    )

    def rows():
        for record in history.records:
            yield (
                [
                    str(record.iteration),
                    _fmt(record.phi),
                    _fmt(record.grad_norm),
                    _fmt(record.max_violation),
                    _fmt(record.step),
                    "1" if record.accepted else "0",
                ]
                + [_fmt(value) for value in record.a]
                + [
                    _fmt(record.augmented_before),
                    _fmt(record.augmented_after),
                    _fmt(record.penalty),
                ]
            )

    return _write_rows(path, header, rows())
