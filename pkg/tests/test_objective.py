from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from multibody.assembly import assemble
from multibody.errors import ModelError
from multibody.integrator import Trajectory, simulate
from multibody.model import AttachmentRef, TermSpec, design_space
from multibody.objective import ObjectiveSpec, build_term, sample_index, sampled_variants

from conftest import build_model, load_shipped, shortened, welded_frame_data


@pytest.fixture(scope="module")
def frame_model():
    return build_model(welded_frame_data())


@pytest.fixture(scope="module")
def frame_run(frame_model):
    system = assemble(frame_model)
    return system, simulate(system)


ARM_TIP = AttachmentRef(body="arm", node="T")
HUB_RIM = AttachmentRef(body="hub", point=(0.1, 0.0, 0.0))
ARM_ROOT = AttachmentRef(body="arm", node="R")
ARM_MIDDLE = AttachmentRef(body="arm", node="arm#1")
HUB_JOINT = AttachmentRef(body="hub", node="R")

TERMS = {
    "displacement_integral": TermSpec(kind="displacement_squared", point=HUB_JOINT, weight=2.0),
    "displacement_terminal": TermSpec(kind="displacement_squared", mode="terminal", at="final", point=ARM_MIDDLE),
    "velocity_integral": TermSpec(kind="velocity_squared", point=HUB_JOINT),
    "velocity_terminal": TermSpec(kind="velocity_squared", mode="terminal", at=0.01, point=HUB_RIM),
    "velocity_initial": TermSpec(kind="velocity_squared", mode="terminal", at="initial", point=HUB_RIM),
    "reaction": TermSpec(kind="reaction_squared", joint="weld", weight=1e-3),
    "tip_deflection": TermSpec(kind="tip_deflection", mode="terminal", at="final", root=ARM_ROOT, tip=ARM_TIP),
    "stress": TermSpec(kind="stress_measure", body="arm", limit=1.0e5, exponent=8.0),
    "min_length": TermSpec(kind="min_length", body="post", minimum=0.5),
}


def _noisy(traj: Trajectory, rng) -> Trajectory:
    return replace(
        traj,
        q=traj.q + 1e-3 * rng.standard_normal(traj.q.shape),
        lam=traj.lam + 1e-2 * rng.standard_normal(traj.lam.shape),
    )


def _scalar_fd(fn, x0: float, step: float = 1e-6) -> float:
    delta = step * (1.0 + abs(x0))
    return (fn(x0 + delta) - fn(x0 - delta)) / (2.0 * delta)


@pytest.mark.parametrize("name", sorted(set(TERMS) - {"stress"}))
def test_state_partials_match_finite_differences(name, frame_run, rng):
    system, base = frame_run
    traj = _noisy(base, rng)
    spec = ObjectiveSpec.from_terms([TERMS[name]])
    partials = spec.partials(traj, system)
    for _ in range(12):
        n = int(rng.integers(0, traj.q.shape[0]))
        i = int(rng.integers(0, system.dof_count))

        def value(x, n=n, i=i):
            q = traj.q.copy()
            q[n, i] = x
            return spec.evaluate(replace(traj, q=q), system)

        expected = _scalar_fd(value, traj.q[n, i])
        assert partials.dq[n, i] == pytest.approx(expected, rel=1e-5, abs=1e-9)
    for _ in range(4):
        n = int(rng.integers(0, traj.lam.shape[0]))
        r = int(rng.integers(0, system.constraint_count))

        def value(x, n=n, r=r):
            lam = traj.lam.copy()
            lam[n, r] = x
            return spec.evaluate(replace(traj, lam=lam), system)

        assert partials.dlam[n, r] == pytest.approx(_scalar_fd(value, traj.lam[n, r]), rel=1e-5, abs=1e-9)


def test_stress_state_partial_matches_directional_difference(frame_run, rng):
    system, base = frame_run
    traj = _noisy(base, rng)
    spec = ObjectiveSpec.from_terms([TERMS["stress"]])
    partials = spec.partials(traj, system)
    assert not np.any(partials.dlam)
    # single off-peak entries sit below difference round-off
    step = 1e-7
    for _ in range(4):
        direction = rng.standard_normal(traj.q.shape)
        direction /= np.max(np.abs(direction))
        plus = spec.evaluate(replace(traj, q=traj.q + step * direction), system)
        minus = spec.evaluate(replace(traj, q=traj.q - step * direction), system)
        expected = (plus - minus) / (2.0 * step)
        assert np.sum(partials.dq * direction) == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize("name", sorted(TERMS))
def test_design_partials_match_finite_differences(name, frame_model, frame_run, rng):
    system, base = frame_run
    traj = _noisy(base, rng)
    spec = ObjectiveSpec.from_terms([TERMS[name]])
    a0 = design_space(frame_model).initial
    partials = spec.partials(traj, system)
    for i in range(a0.size):

        def value(x, i=i):
            a = a0.copy()
            a[i] = x
            return spec.evaluate(traj, assemble(frame_model, a))

        assert partials.da[i] == pytest.approx(_scalar_fd(value, a0[i]), rel=1e-5, abs=1e-9)


def test_initial_velocity_partial_reads_qdot0(frame_run, rng):
    system, traj = frame_run
    spec = ObjectiveSpec.from_terms([TERMS["velocity_initial"]])
    partials = spec.partials(traj, system)
    assert not np.any(partials.dq)
    for i in rng.choice(system.dof_count, size=6, replace=False):

        def value(x, i=i):
            qdot0 = traj.qdot0.copy()
            qdot0[i] = x
            return spec.evaluate(replace(traj, qdot0=qdot0), system)

        assert partials.dqdot0[i] == pytest.approx(_scalar_fd(value, traj.qdot0[i]), rel=1e-5, abs=1e-9)


def test_partials_are_additive(frame_run):
    system, traj = frame_run
    first = ObjectiveSpec.from_terms([TERMS["displacement_integral"]])
    second = ObjectiveSpec.from_terms([TERMS["reaction"]])
    both = ObjectiveSpec(terms=first.terms + second.terms)
    total = first.partials(traj, system) + second.partials(traj, system)
    np.testing.assert_allclose(both.partials(traj, system).dq, total.dq)
    assert both.evaluate(traj, system) == pytest.approx(first.evaluate(traj, system) + second.evaluate(traj, system))


def test_min_length_value(frame_run):
    system, traj = frame_run
    spec = ObjectiveSpec.from_terms([TERMS["min_length"]])
    assert spec.evaluate(traj, system) == pytest.approx(0.5 - 0.8)


def test_sample_index():
    traj = Trajectory(h=0.01, alpha=0.5, q=np.zeros((11, 3)), lam=np.zeros((10, 0)), qdot0=np.zeros(3))
    assert sample_index("final", traj) == 10
    assert sample_index("initial", traj) == 0
    assert sample_index(0.03, traj) == 3
    with pytest.raises(ModelError):
        sample_index(0.035, traj)
    with pytest.raises(ModelError):
        sample_index(0.2, traj)


def test_unknown_term_kind():
    with pytest.raises(ModelError):
        build_term(TermSpec(kind="kinetic_energy"))


def test_pendulum_tip_deflection_variants():
    model = shortened(load_shipped("pendulum"), T=0.02)
    system = assemble(model)
    traj = simulate(system)
    variants = sampled_variants(model.objective[0], [0.01, 0.02])
    assert [spec.terms[0].at for spec in variants] == [0.01, 0.02]
    values = [spec.evaluate(traj, system) for spec in variants]
    assert np.all(np.isfinite(values))
    assert values[0] != values[1]
