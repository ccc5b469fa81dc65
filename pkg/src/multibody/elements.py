"""Element kinematics, mass matrices and generalized forces.

Beam vectors use the local ordering [r_i, r'_i, r_j, r'_j] (12 entries) and
rigid-body vectors the ordering [r_cm, e1, e2, e3]. Conservative "forces" are
potential gradients dU/dq; the damper returns the physical force. Scattering to
global indices happens in ``multibody.assembly``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ModelError, NumericalError

STRAIN_AVERAGED = "averaged"
STRAIN_CHORD = "chord"
STRAIN_MEASURES = (STRAIN_AVERAGED, STRAIN_CHORD)

BEAM_PARAMETERS = ("length", "area", "second_moment", "youngs_modulus", "density")

_I3 = np.eye(3)


@dataclass(frozen=True)
class BeamElement:
    length: float
    area: float
    second_moment: float
    youngs_modulus: float
    density: float
    strain_measure: str = STRAIN_AVERAGED
    literal_transverse: bool = False

    def __post_init__(self) -> None:
        for name in BEAM_PARAMETERS:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ModelError(f"beam {name} must be positive, got {value}")
        if self.strain_measure not in STRAIN_MEASURES:
            raise ModelError(f"unknown strain measure {self.strain_measure!r}")


@dataclass(frozen=True)
class RigidBody:
    mass: float
    inertia: Tuple[float, float, float]
    center_of_mass: Tuple[float, float, float]
    frame: Tuple[Tuple[float, float, float], ...]


@dataclass(frozen=True)
class BeamDesignDerivatives:
    mass: np.ndarray
    elastic: np.ndarray
    gravity: np.ndarray


def _kron3(block: np.ndarray) -> np.ndarray:
    return np.kron(block, _I3)


def _mass_pattern(l: float) -> np.ndarray:
    return np.array(
        [
            [156.0, 22.0 * l, 54.0, -13.0 * l],
            [22.0 * l, 4.0 * l * l, 13.0 * l, -3.0 * l * l],
            [54.0, 13.0 * l, 156.0, -22.0 * l],
            [-13.0 * l, -3.0 * l * l, -22.0 * l, 4.0 * l * l],
        ]
    )


def _mass_pattern_dl(l: float) -> np.ndarray:
    return np.array(
        [
            [0.0, 22.0, 0.0, -13.0],
            [22.0, 8.0 * l, 13.0, -6.0 * l],
            [0.0, 13.0, 0.0, -22.0],
            [-13.0, -6.0 * l, -22.0, 8.0 * l],
        ]
    )


def _longitudinal_pattern(l: float) -> np.ndarray:
    return np.array(
        [
            [6.0 / 5.0, l / 10.0, -6.0 / 5.0, l / 10.0],
            [l / 10.0, 2.0 * l * l / 15.0, -l / 10.0, -l * l / 30.0],
            [-6.0 / 5.0, -l / 10.0, 6.0 / 5.0, -l / 10.0],
            [l / 10.0, -l * l / 30.0, -l / 10.0, 2.0 * l * l / 15.0],
        ]
    )


def _longitudinal_pattern_dl(l: float) -> np.ndarray:
    return np.array(
        [
            [0.0, 0.1, 0.0, 0.1],
            [0.1, 4.0 * l / 15.0, -0.1, -l / 15.0],
            [0.0, -0.1, 0.0, -0.1],
            [0.1, -l / 15.0, -0.1, 4.0 * l / 15.0],
        ]
    )


def _transverse_pattern(l: float) -> np.ndarray:
    return np.array(
        [
            [12.0, 6.0 * l, -12.0, 6.0 * l],
            [6.0 * l, 4.0 * l * l, -6.0 * l, 2.0 * l * l],
            [-12.0, -6.0 * l, 12.0, -6.0 * l],
            [6.0 * l, 2.0 * l * l, -6.0 * l, 4.0 * l * l],
        ]
    )


def _transverse_pattern_dl(l: float) -> np.ndarray:
    return np.array(
        [
            [0.0, 6.0, 0.0, 6.0],
            [6.0, 8.0 * l, -6.0, 4.0 * l],
            [0.0, -6.0, 0.0, -6.0],
            [6.0, 4.0 * l, -6.0, 8.0 * l],
        ]
    )


def _relative(q_elem: np.ndarray) -> np.ndarray:
    # The stiffness patterns annihilate rigid translations, so working with
    # r_j - r_i keeps the products well scaled away from the origin.
    q = np.array(q_elem, dtype=float)
    q[6:9] = q[6:9] - q[0:3]
    q[0:3] = 0.0
    return q


def beam_shape(xi: float, l: float) -> np.ndarray:
    if xi < 0.0 or xi > 1.0:
        raise ModelError(f"xi must lie in [0, 1], got {xi}")
    xi2 = xi * xi
    xi3 = xi2 * xi
    return np.array(
        [
            1.0 - 3.0 * xi2 + 2.0 * xi3,
            l * (xi - 2.0 * xi2 + xi3),
            3.0 * xi2 - 2.0 * xi3,
            l * (xi3 - xi2),
        ]
    )


def beam_shape_derivatives(xi: float, l: float) -> Tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of the shape functions along x = xi * l."""
    if xi < 0.0 or xi > 1.0:
        raise ModelError(f"xi must lie in [0, 1], got {xi}")
    first = np.array(
        [
            (6.0 * xi * xi - 6.0 * xi) / l,
            1.0 - 4.0 * xi + 3.0 * xi * xi,
            (6.0 * xi - 6.0 * xi * xi) / l,
            3.0 * xi * xi - 2.0 * xi,
        ]
    )
    second = np.array(
        [
            (12.0 * xi - 6.0) / (l * l),
            (6.0 * xi - 4.0) / l,
            (6.0 - 12.0 * xi) / (l * l),
            (6.0 * xi - 2.0) / l,
        ]
    )
    return first, second


def beam_shape_matrix(xi: float, l: float) -> np.ndarray:
    return np.kron(beam_shape(xi, l)[None, :], _I3)


def beam_mass(density: float, area: float, length: float) -> np.ndarray:
    return _kron3(density * area * length / 420.0 * _mass_pattern(length))


def beam_mass_partials(density: float, area: float, length: float) -> Dict[str, np.ndarray]:
    mass = beam_mass(density, area, length)
    d_length = _kron3(
        density * area / 420.0 * (_mass_pattern(length) + length * _mass_pattern_dl(length))
    )
    return {"length": d_length, "area": mass / area, "density": mass / density}


def beam_strain(q_elem: np.ndarray, l: float) -> float:
    chord = np.asarray(q_elem[6:9], dtype=float) - np.asarray(q_elem[0:3], dtype=float)
    return float(np.linalg.norm(chord) / l - 1.0)


def beam_strain_gradient(q_elem: np.ndarray, l: float) -> np.ndarray:
    chord = np.asarray(q_elem[6:9], dtype=float) - np.asarray(q_elem[0:3], dtype=float)
    norm = np.linalg.norm(chord)
    grad = np.zeros(12)
    if norm == 0.0:
        return grad
    unit = chord / norm
    grad[0:3] = -unit / l
    grad[6:9] = unit / l
    return grad


def beam_average_strain(q_elem: np.ndarray, l: float) -> float:
    q = _relative(q_elem)
    pattern = _kron3(_longitudinal_pattern(l))
    return float(0.5 * (q @ pattern @ q / (l * l) - 1.0))


def beam_axial_stress(q_elem: np.ndarray, element: BeamElement) -> float:
    return element.youngs_modulus * beam_strain(q_elem, element.length)


def _strain_terms(
    q_rel: np.ndarray,
    q_elem: np.ndarray,
    element: BeamElement,
    p_q: np.ndarray,
) -> Tuple[float, np.ndarray, float]:
    """Prefactor strain, its q-gradient and its explicit length derivative."""
    l = element.length
    if element.strain_measure == STRAIN_CHORD:
        eps = beam_strain(q_elem, l)
        return eps, beam_strain_gradient(q_elem, l), -(eps + 1.0) / l
    quad = float(q_rel @ p_q)
    eps = 0.5 * (quad / (l * l) - 1.0)
    dp = _kron3(_longitudinal_pattern_dl(l))
    deps_dl = 0.5 * (float(q_rel @ dp @ q_rel) / (l * l) - 2.0 * quad / l**3)
    return eps, p_q / (l * l), deps_dl


def beam_elastic_force(q_elem: np.ndarray, element: BeamElement) -> np.ndarray:
    l = element.length
    ea = element.youngs_modulus * element.area
    q = _relative(q_elem)
    p_q = _kron3(_longitudinal_pattern(l)) @ q
    t_q = _kron3(_transverse_pattern(l)) @ q
    eps, _, _ = _strain_terms(q, q_elem, element, p_q)
    force = (ea / l) * eps * p_q
    if element.literal_transverse:
        force += (ea * eps / l**3) * t_q
    else:
        force += (element.youngs_modulus * element.second_moment / l**3) * t_q
    return force


def beam_elastic_stiffness(q_elem: np.ndarray, element: BeamElement) -> np.ndarray:
    """Jacobian of ``beam_elastic_force`` with respect to q_elem."""
    l = element.length
    ea = element.youngs_modulus * element.area
    q = _relative(q_elem)
    pattern = _kron3(_longitudinal_pattern(l))
    transverse = _kron3(_transverse_pattern(l))
    p_q = pattern @ q
    eps, deps, _ = _strain_terms(q, q_elem, element, p_q)
    stiffness = (ea / l) * (eps * pattern + np.outer(p_q, deps))
    if element.literal_transverse:
        stiffness += (ea / l**3) * (eps * transverse + np.outer(transverse @ q, deps))
    else:
        stiffness += (element.youngs_modulus * element.second_moment / l**3) * transverse
    return stiffness


def beam_elastic_energy(q_elem: np.ndarray, element: BeamElement) -> float:
    """Elastic potential whose gradient is the default (averaged-strain) force."""
    l = element.length
    q = _relative(q_elem)
    eps = beam_average_strain(q_elem, l)
    bending = float(q @ _kron3(_transverse_pattern(l)) @ q) / l**3
    return 0.5 * element.youngs_modulus * (
        element.area * l * eps * eps + element.second_moment * bending
    )


def beam_elastic_force_partials(
    q_elem: np.ndarray, element: BeamElement
) -> Dict[str, np.ndarray]:
    """Explicit derivatives of the elastic force with respect to each parameter."""
    l = element.length
    e_mod = element.youngs_modulus
    area = element.area
    q = _relative(q_elem)
    p_q = _kron3(_longitudinal_pattern(l)) @ q
    dp_q = _kron3(_longitudinal_pattern_dl(l)) @ q
    t_q = _kron3(_transverse_pattern(l)) @ q
    dt_q = _kron3(_transverse_pattern_dl(l)) @ q
    eps, _, deps_dl = _strain_terms(q, q_elem, element, p_q)

    longitudinal = eps * p_q / l
    d_length = e_mod * area * (-eps * p_q / l**2 + deps_dl * p_q / l + eps * dp_q / l)
    d_transverse_dl = dt_q / l**3 - 3.0 * t_q / l**4
    if element.literal_transverse:
        transverse = eps * t_q / l**3
        d_area = e_mod * (longitudinal + transverse)
        d_youngs = area * (longitudinal + transverse)
        d_second = np.zeros(12)
        d_length = d_length + e_mod * area * (deps_dl * t_q / l**3 + eps * d_transverse_dl)
    else:
        transverse = t_q / l**3
        d_area = e_mod * longitudinal
        d_youngs = area * longitudinal + element.second_moment * transverse
        d_second = e_mod * transverse
        d_length = d_length + e_mod * element.second_moment * d_transverse_dl
    return {
        "length": d_length,
        "area": d_area,
        "second_moment": d_second,
        "youngs_modulus": d_youngs,
        "density": np.zeros(12),
    }


def beam_gravity_force(
    density: float, area: float, length: float, gravity: Sequence[float]
) -> np.ndarray:
    nu = np.asarray(gravity, dtype=float)
    weights = np.array([6.0, length, 6.0, -length])
    return -(density * area * length / 12.0) * np.kron(weights, nu)


def beam_gravity_partials(
    density: float, area: float, length: float, gravity: Sequence[float]
) -> Dict[str, np.ndarray]:
    nu = np.asarray(gravity, dtype=float)
    force = beam_gravity_force(density, area, length, gravity)
    d_length = -(density * area / 12.0) * np.kron(
        np.array([6.0, 2.0 * length, 6.0, -2.0 * length]), nu
    )
    return {"length": d_length, "area": force / area, "density": force / density}


def beam_design_derivatives(
    q_elem: np.ndarray,
    element: BeamElement,
    gravity: Sequence[float],
    parameter_rates: Mapping[str, float],
) -> BeamDesignDerivatives:
    """Chain element partials with d(parameter)/d(a_i) for one design variable.

    ``parameter_rates`` maps parameter names (see ``BEAM_PARAMETERS``) to their
    derivative with respect to the design variable; missing names count as 0.
    """
    mass = np.zeros((12, 12))
    elastic = np.zeros(12)
    weight = np.zeros(12)
    if not any(parameter_rates.get(name, 0.0) for name in BEAM_PARAMETERS):
        return BeamDesignDerivatives(mass=mass, elastic=elastic, gravity=weight)
    mass_partials = beam_mass_partials(element.density, element.area, element.length)
    elastic_partials = beam_elastic_force_partials(q_elem, element)
    gravity_partials = beam_gravity_partials(
        element.density, element.area, element.length, gravity
    )
    for name in BEAM_PARAMETERS:
        rate = parameter_rates.get(name, 0.0)
        if rate == 0.0:
            continue
        elastic += rate * elastic_partials[name]
        if name in mass_partials:
            mass += rate * mass_partials[name]
            weight += rate * gravity_partials[name]
    return BeamDesignDerivatives(mass=mass, elastic=elastic, gravity=weight)


def length_derivative(x_i: Sequence[float], x_j: Sequence[float]) -> np.ndarray:
    """Derivative of ||x_j - x_i|| with respect to x_j."""
    chord = np.asarray(x_j, dtype=float) - np.asarray(x_i, dtype=float)
    return chord / np.linalg.norm(chord)


def rigid_mass(mass: float, i1: float, i2: float, i3: float) -> np.ndarray:
    if mass <= 0.0:
        raise ModelError(f"rigid body mass must be positive, got {mass}")
    inertia = (i1, i2, i3)
    if min(inertia) <= 0.0:
        raise ModelError(f"principal inertias must be positive, got {inertia}")
    slack = 1e-12 * max(inertia)
    for a, b, c in ((i1, i2, i3), (i1, i3, i2), (i2, i3, i1)):
        if a + b < c - slack:
            raise ModelError(f"inertias {inertia} violate the triangle inequality")
    blocks = [
        mass,
        0.5 * (i2 + i3 - i1),
        0.5 * (i1 + i3 - i2),
        0.5 * (i1 + i2 - i3),
    ]
    return np.kron(np.diag(blocks), _I3)


def rigid_shape_matrix(local: Sequence[float]) -> np.ndarray:
    x, y, z = (float(value) for value in local)
    return np.hstack([_I3, x * _I3, y * _I3, z * _I3])


def rigid_point_position(q_body: np.ndarray, local: Sequence[float]) -> np.ndarray:
    return rigid_shape_matrix(local) @ np.asarray(q_body, dtype=float)


def rigid_gravity_force(mass: float, gravity: Sequence[float]) -> np.ndarray:
    force = np.zeros(12)
    force[0:3] = -mass * np.asarray(gravity, dtype=float)
    return force


def _pair_matrix(shape_a: np.ndarray, shape_b: np.ndarray) -> np.ndarray:
    return np.hstack([shape_a, -shape_b])


def _spring_delta(
    q_a: np.ndarray,
    q_b: np.ndarray,
    shape_a: np.ndarray,
    shape_b: np.ndarray,
    offset: Optional[Sequence[float]],
) -> np.ndarray:
    delta = shape_a @ np.asarray(q_a, dtype=float) - shape_b @ np.asarray(q_b, dtype=float)
    if offset is not None:
        delta = delta + np.asarray(offset, dtype=float)
    return delta


def spring_tension(delta: np.ndarray, stiffness: float, natural_length: float) -> np.ndarray:
    """dU/d(delta) for U = k/2 (|delta| - l0)^2."""
    length = float(np.linalg.norm(delta))
    if length == 0.0:
        raise NumericalError("spring length is zero; force direction is undefined")
    return stiffness * (1.0 - natural_length / length) * delta


def spring_tangent(delta: np.ndarray, stiffness: float, natural_length: float) -> np.ndarray:
    length = float(np.linalg.norm(delta))
    if length == 0.0:
        raise NumericalError("spring length is zero; force direction is undefined")
    ratio = natural_length / length
    return stiffness * ((1.0 - ratio) * _I3 + ratio * np.outer(delta, delta) / length**2)


def spring_force(
    q_a: np.ndarray,
    q_b: np.ndarray,
    shape_a: np.ndarray,
    shape_b: np.ndarray,
    stiffness: float,
    natural_length: float,
    offset: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Stacked [A; B] gradient of the spring potential.

    A ground endpoint is passed as an empty coordinate vector with a 3x0 shape
    matrix, its position going into ``offset``.
    """
    delta = _spring_delta(q_a, q_b, shape_a, shape_b, offset)
    return _pair_matrix(shape_a, shape_b).T @ spring_tension(delta, stiffness, natural_length)


def spring_stiffness(
    q_a: np.ndarray,
    q_b: np.ndarray,
    shape_a: np.ndarray,
    shape_b: np.ndarray,
    stiffness: float,
    natural_length: float,
    offset: Optional[Sequence[float]] = None,
) -> np.ndarray:
    delta = _spring_delta(q_a, q_b, shape_a, shape_b, offset)
    pair = _pair_matrix(shape_a, shape_b)
    return pair.T @ spring_tangent(delta, stiffness, natural_length) @ pair


def spring_energy(
    q_a: np.ndarray,
    q_b: np.ndarray,
    shape_a: np.ndarray,
    shape_b: np.ndarray,
    stiffness: float,
    natural_length: float,
    offset: Optional[Sequence[float]] = None,
) -> float:
    delta = _spring_delta(q_a, q_b, shape_a, shape_b, offset)
    return 0.5 * stiffness * (float(np.linalg.norm(delta)) - natural_length) ** 2


def damper_matrix(shape_a: np.ndarray, shape_b: np.ndarray, damping: float) -> np.ndarray:
    pair = _pair_matrix(shape_a, shape_b)
    return damping * pair.T @ pair


def damper_force(
    qdot_a: np.ndarray,
    qdot_b: np.ndarray,
    shape_a: np.ndarray,
    shape_b: np.ndarray,
    damping: float,
) -> np.ndarray:
    velocity = np.concatenate([np.asarray(qdot_a, dtype=float), np.asarray(qdot_b, dtype=float)])
    return -damper_matrix(shape_a, shape_b, damping) @ velocity
