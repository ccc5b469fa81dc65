from __future__ import annotations

import csv

import numpy as np

from multibody.adjoint import SensitivityReport
from multibody.export import (
    HISTORY_COLUMNS,
    SENSITIVITY_COLUMNS,
    trajectory_header,
    write_history_csv,
    write_sensitivity_csv,
    write_trajectory_csv,
)
from multibody.integrator import Trajectory
from multibody.optimizer import CONVERGED, OptimizationHistory, OptimizationRecord


def _read(path):
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


def test_trajectory_rows_leave_last_multiplier_blank(tmp_path):
    q = np.arange(12, dtype=float).reshape(4, 3) / 7.0
    lam = np.array([[0.1, -0.2], [0.3, 0.4], [1e-17, 2.5]])
    traj = Trajectory(h=0.25, alpha=0.5, q=q, lam=lam, qdot0=np.zeros(3))
    path = write_trajectory_csv(traj, tmp_path / "nested" / "trajectory.csv")
    rows = _read(path)
    assert rows[0] == ["t", "q_0", "q_1", "q_2", "lambda_0", "lambda_1"]
    assert len(rows) == 5
    assert [float(row[0]) for row in rows[1:]] == [0.0, 0.25, 0.5, 0.75]
    assert float(rows[2][2]) == q[1, 1]
    assert float(rows[3][4]) == 1e-17
    assert rows[4][4:] == ["", ""]
    assert not (tmp_path / "nested" / "trajectory.csv.tmp").exists()


def test_trajectory_header_without_constraints():
    assert trajectory_header(2, 0) == ["t", "q_0", "q_1"]


def test_sensitivity_rows_keep_full_precision(tmp_path):
    gradient = np.array([1.0 / 3.0, -2.5e-9])
    report = SensitivityReport(
        method="adjoint",
        variable_ids=("X_B", "E"),
        value=0.7,
        gradient=gradient,
        term_explicit=np.array([0.1, 0.0]),
        term_mu=gradient - np.array([0.1, 0.0]),
        term_eta=np.zeros(2),
        term_q0=np.zeros(2),
        term_qdot0=np.zeros(2),
    )
    rows = _read(write_sensitivity_csv([report], tmp_path / "sensitivity_adjoint.csv"))
    assert tuple(rows[0]) == SENSITIVITY_COLUMNS
    assert [row[:2] for row in rows[1:]] == [["X_B", "adjoint"], ["E", "adjoint"]]
    assert float(rows[1][2]) == 1.0 / 3.0
    assert float(rows[2][2]) == -2.5e-9


def test_history_columns(tmp_path):
    records = [
        OptimizationRecord(
            iteration=i,
            phi=1.0 / (i + 1),
            augmented_before=2.0,
            augmented_after=1.5,
            grad_norm=0.5,
            max_violation=0.0,
            step=0.01 * i,
            accepted=i != 2,
            a=np.array([0.1 * i, 0.2]),
            multipliers=np.zeros(0),
            penalty=10.0,
        )
        for i in range(3)
    ]
    history = OptimizationHistory(variable_ids=("X_D", "Y_D"), records=records, status=CONVERGED)
    rows = _read(write_history_csv(history, tmp_path / "history.csv"))
    assert rows[0] == list(HISTORY_COLUMNS) + ["a_0", "a_1", "augmented_before", "augmented_after", "penalty"]
    assert [row[0] for row in rows[1:]] == ["0", "1", "2"]
    assert [row[5] for row in rows[1:]] == ["1", "1", "0"]
    assert float(rows[3][6]) == 0.1 * 2
    assert float(rows[2][1]) == 0.5
