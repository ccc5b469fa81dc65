from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from multibody import optimizer
from multibody.elements import spring_tension
from multibody.errors import ConfigurationError, ModelError
from multibody.model import DesignSpace, OptSettings
from multibody.objective import ObjectiveSpec
from multibody.optimizer import (
    ABORTED,
    CONVERGED,
    MAX_ITERS,
    Evaluation,
    OptProblem,
    augmented_objective,
    augmented_value,
    descent_step,
    optimize,
    scaled_direction,
    should_stop,
    update_multipliers,
)

from conftest import load_shipped, shortened

EMPTY = ObjectiveSpec(terms=())


def _space(initial, lower=0.0, upper=1.0):
    initial = np.asarray(initial, dtype=float)
    ids = tuple(f"a{i}" for i in range(initial.size))
    return DesignSpace(
        ids=ids,
        initial=initial,
        lower=np.full(initial.size, lower),
        upper=np.full(initial.size, upper),
    )


def _problem(initial, constraints=0, **settings):
    return OptProblem(
        factory=lambda a: None,
        objective=EMPTY,
        space=_space(initial),
        constraints=tuple((f"c{j}", EMPTY) for j in range(constraints)),
        settings=OptSettings(**settings),
    )


def _quadratic(target):
    target = np.asarray(target, dtype=float)

    def evaluate(problem, a):
        a = np.asarray(a, dtype=float)
        return Evaluation(
            a=a.copy(),
            phi=float(np.sum((a - target) ** 2)),
            gradient=2.0 * (a - target),
            constraint_values=np.zeros(0),
            constraint_gradients=np.zeros((0, a.size)),
        )

    return evaluate


def _budget(problem, a):
    """(a0 - 0.8)^2 + (a1 - 0.8)^2 subject to a0 + a1 <= 1."""
    a = np.asarray(a, dtype=float)
    return Evaluation(
        a=a.copy(),
        phi=float(np.sum((a - 0.8) ** 2)),
        gradient=2.0 * (a - 0.8),
        constraint_values=np.array([a[0] + a[1] - 1.0]),
        constraint_gradients=np.ones((1, 2)),
    )


def test_optimal_start_stops_after_patience(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _quadratic([0.3, 0.6]))
    history = optimize(_problem([0.3, 0.6]))
    assert history.status == CONVERGED
    assert len(history.records) == 6
    assert history.records[-1].iteration == 5
    assert not any(record.accepted for record in history.records[1:])
    np.testing.assert_array_equal(history.final_design, [0.3, 0.6])


def test_constrained_stalls_raise_the_penalty_instead_of_converging(monkeypatch):
    def pinned(problem, a):
        a = np.asarray(a, dtype=float)
        return Evaluation(
            a=a.copy(),
            phi=float((a[0] - 0.5) ** 2),
            gradient=2.0 * (a - 0.5),
            constraint_values=np.array([a[0] - 0.6]),
            constraint_gradients=np.ones((1, 1)),
        )

    monkeypatch.setattr(optimizer, "evaluate_design", pinned)
    space = DesignSpace(ids=("a0",), initial=np.array([0.8]), lower=np.array([0.8]), upper=np.array([1.0]))
    problem = OptProblem(
        factory=lambda a: None,
        objective=EMPTY,
        space=space,
        constraints=(("c0", EMPTY),),
        settings=OptSettings(max_iters=8, patience=5),
    )
    history = optimize(problem)
    assert history.status == MAX_ITERS
    assert len(history.records) == 9
    assert not any(record.accepted for record in history.records[1:])
    assert history.records[-1].penalty > 10.0
    assert history.records[-1].multipliers[0] > 0.0


def test_projection_reaches_the_box_corner(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _quadratic([1.5, -0.5]))
    history = optimize(_problem([0.5, 0.5], initial_step=0.5))
    np.testing.assert_allclose(history.records[1].a, [1.0, 0.0])
    assert history.records[1].accepted
    assert history.records[1].phi == pytest.approx(0.5)
    assert history.status == CONVERGED
    assert len(history.records) == 7
    np.testing.assert_allclose(history.final_design, [1.0, 0.0])
    assert np.all(np.diff(history.phi_values) <= 0.0)


def test_accepted_steps_lower_the_augmented_objective(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _budget)
    history = optimize(_problem([0.9, 0.9], constraints=1, initial_step=0.5, patience=100))
    assert history.records[0].max_violation == pytest.approx(0.8)
    for record in history.records[1:]:
        if record.accepted:
            assert record.augmented_after < record.augmented_before
    assert history.records[-1].max_violation < 0.1
    assert any(record.multipliers[0] > 0.0 for record in history.records)
    assert all(record.penalty <= 1e6 for record in history.records)


def test_failed_trials_abort(monkeypatch):
    start = np.array([0.5, 0.5])
    quadratic = _quadratic([0.0, 0.0])

    def evaluate(problem, a):
        if not np.array_equal(a, start):
            raise ModelError("beam is degenerate")
        return quadratic(problem, a)

    monkeypatch.setattr(optimizer, "evaluate_design", evaluate)
    history = optimize(_problem(start))
    assert history.status == ABORTED
    assert "iteration 1" in history.message
    assert len(history.records) == 2
    np.testing.assert_array_equal(history.final_design, start)


def test_collapsed_spring_trials_backtrack_then_abort(monkeypatch):
    start = np.array([0.5, 0.5])
    quadratic = _quadratic([0.0, 0.0])
    attempts = []

    def evaluate(problem, a):
        if not np.array_equal(a, start):
            attempts.append(a.copy())
            spring_tension(np.zeros(3), 1.0, 1.0)
        return quadratic(problem, a)

    monkeypatch.setattr(optimizer, "evaluate_design", evaluate)
    history = optimize(_problem(start))
    assert history.status == ABORTED
    assert len(attempts) > 1
    assert attempts[1][0] > attempts[0][0]
    np.testing.assert_array_equal(history.final_design, start)


def test_zero_iterations_records_the_start(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _quadratic([0.0, 0.0]))
    history = optimize(_problem([0.5, 0.5], max_iters=0))
    assert history.status == MAX_ITERS
    assert len(history.records) == 1
    assert history.records[0].phi == pytest.approx(0.5)


def test_callbacks(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _quadratic([0.2, 0.2]))
    seen = []

    def noisy(message):
        raise RuntimeError("listener failed")

    history = optimize(
        _problem([0.5, 0.5], max_iters=3, patience=0),
        progress_callback=noisy,
        on_record=lambda h: seen.append(len(h.records)),
    )
    assert history.status == MAX_ITERS
    assert seen == [1, 2, 3, 4]


def test_initial_design_outside_box(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _quadratic([0.0, 0.0]))
    with pytest.raises(ConfigurationError):
        optimize(_problem([0.5, 0.5]), initial=[1.5, 0.5])


def test_augmented_gradient_matches_finite_differences():
    multipliers, penalty = np.array([6.0]), 10.0

    def evaluation(a):
        return Evaluation(
            a=a,
            phi=float(np.sin(a[0]) + a[1] ** 3),
            gradient=np.array([np.cos(a[0]), 3.0 * a[1] ** 2]),
            constraint_values=np.array([a[0] ** 2 + a[1] - 0.5]),
            constraint_gradients=np.array([[2.0 * a[0], 1.0]]),
        )

    a = np.array([0.3, 0.2])
    _, gradient = augmented_value(evaluation(a), multipliers, penalty)
    expected = np.zeros(2)
    for i in range(2):
        shift = np.zeros(2)
        shift[i] = 1e-6
        plus, _ = augmented_value(evaluation(a + shift), multipliers, penalty)
        minus, _ = augmented_value(evaluation(a - shift), multipliers, penalty)
        expected[i] = (plus - minus) / 2e-6
    np.testing.assert_allclose(gradient, expected, rtol=1e-7)


def test_inactive_constraint_leaves_objective_unchanged():
    evaluation = Evaluation(
        a=np.zeros(1),
        phi=2.0,
        gradient=np.array([1.0]),
        constraint_values=np.array([-1.0]),
        constraint_gradients=np.array([[5.0]]),
    )
    value, gradient = augmented_value(evaluation, np.zeros(1), 10.0)
    assert value == pytest.approx(2.0)
    np.testing.assert_allclose(gradient, [1.0])
    assert evaluation.max_violation == 0.0


def test_scaled_direction():
    direction = scaled_direction(np.array([2.0, -1.0]), np.array([1.0, 10.0]))
    np.testing.assert_allclose(direction, [0.2, -10.0])
    np.testing.assert_array_equal(scaled_direction(np.zeros(2), np.ones(2)), [0.0, 0.0])


def test_descent_step_projects_onto_box():
    trial = descent_step(np.array([0.5, 0.5]), np.array([1.0, -1.0]), 1.0, np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(trial, [0.0, 1.0])
    with pytest.raises(ValueError):
        descent_step(np.zeros(2), np.ones(2), 0.0, np.zeros(2), np.ones(2))


def test_should_stop():
    assert not should_stop([1e-7] * 4, 1e-6, 5)
    assert should_stop([1.0] + [1e-7] * 5, 1e-6, 5)
    assert not should_stop([1e-7] * 4 + [1.0], 1e-6, 5)
    assert not should_stop([0.0] * 10, 1e-6, 0)


def test_update_multipliers_grows_penalty_on_slow_progress():
    evaluation = _budget(None, np.array([0.6, 0.6]))
    multipliers, penalty = update_multipliers(np.zeros(1), 10.0, evaluation, previous_violation=None)
    np.testing.assert_allclose(multipliers, [2.0])
    assert penalty == 10.0
    _, grown = update_multipliers(multipliers, 10.0, evaluation, previous_violation=0.25)
    assert grown == pytest.approx(50.0)
    _, kept = update_multipliers(multipliers, 10.0, evaluation, previous_violation=1.0)
    assert kept == 10.0
    _, capped = update_multipliers(multipliers, 9e5, evaluation, previous_violation=0.2)
    assert capped == 1e6


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        OptProblem(factory=lambda a: None, objective=EMPTY, space=_space([]))
    with pytest.raises(ConfigurationError):
        OptProblem(factory=lambda a: None, objective=EMPTY, space=_space([0.5], lower=1.0, upper=0.0))
    with pytest.raises(ConfigurationError):
        _problem([0.5], gradient="complex_step")
    with pytest.raises(ConfigurationError):
        OptProblem.from_model(load_shipped("pendulum"))


def test_open_bounds_scale_by_one():
    space = DesignSpace(
        ids=("a", "b"),
        initial=np.zeros(2),
        lower=np.array([-1e300, -2.0]),
        upper=np.array([1e300, 2.0]),
    )
    problem = OptProblem(factory=lambda a: None, objective=EMPTY, space=space)
    np.testing.assert_array_equal(problem.widths, [1.0, 4.0])


def test_spring_beam_optimization_steps_downhill():
    model = shortened(load_shipped("rigid_spring_beam"), T=0.05)
    model = replace(model, optimization=replace(model.optimization, max_iters=2))
    problem = OptProblem.from_model(model)
    assert [label for label, _ in problem.constraints] == ["min_length:beam"]
    history = optimize(problem, progress_callback=lambda message: None)
    assert history.records[0].phi > 0.0
    for record in history.records[1:]:
        if record.accepted:
            assert record.augmented_after < record.augmented_before
    assert history.status in (CONVERGED, MAX_ITERS)
    assert np.all(history.final_design >= problem.space.lower)
    assert np.all(history.final_design <= problem.space.upper)


def test_augmented_objective_evaluates_the_design(monkeypatch):
    monkeypatch.setattr(optimizer, "evaluate_design", _budget)
    problem = _problem([0.5, 0.5], constraints=1)
    value, gradient = augmented_objective(problem, [0.7, 0.6], [1.0], 10.0)
    expected_value, expected_gradient = augmented_value(_budget(problem, np.array([0.7, 0.6])), np.array([1.0]), 10.0)
    assert value == pytest.approx(expected_value)
    np.testing.assert_allclose(gradient, expected_gradient)
    # c = 0.3, shifted multiplier 4
    assert value == pytest.approx(0.01 + 0.04 + (16.0 - 1.0) / 20.0)
