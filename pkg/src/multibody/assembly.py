"""Global assembly: DOF layout, constant matrices, force and constraint registries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .attachments import Attachment
from .constraints import ConstraintSet, ConstraintSetBuilder, Excitation
from .elements import (
    BEAM_PARAMETERS,
    BeamElement,
    RigidBody,
    beam_design_derivatives,
    beam_elastic_energy,
    beam_elastic_force,
    beam_elastic_force_partials,
    beam_elastic_stiffness,
    beam_gravity_force,
    beam_mass,
    length_derivative,
    rigid_gravity_force,
    rigid_mass,
    rigid_shape_matrix,
    spring_energy,
    spring_force,
    spring_stiffness,
    spring_tangent,
    spring_tension,
)
from .errors import ModelError
from .model import (
    AttachmentRef,
    BeamSpec,
    DamperSpec,
    ModelDefinition,
    NODE_POSITION_KINDS,
    RigidBodySpec,
    SimSettings,
    SpringSpec,
    VelocitySpec,
    design_space,
    with_design,
)

logger = logging.getLogger(__name__)

RIGID = "rigid"
BEAM = "beam"


@dataclass(frozen=True, eq=False)
class BodyLayout:
    name: str
    kind: str
    offset: int
    size: int
    nodes: Tuple[str, ...] = ()
    rigid: Optional[RigidBody] = None
    center_rate: Optional[np.ndarray] = None

    @property
    def dofs(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size)

    @property
    def frame(self) -> np.ndarray:
        return np.asarray(self.rigid.frame, dtype=float)

    def node_offset(self, node: str) -> int:
        return self.offset + 6 * self.nodes.index(node)


@dataclass(frozen=True, eq=False)
class BeamElementEntry:
    beam: str
    index: int
    dofs: np.ndarray
    element: BeamElement
    rates: Dict[str, np.ndarray]

    @property
    def active(self) -> np.ndarray:
        stacked = np.vstack([self.rates[name] for name in BEAM_PARAMETERS])
        return np.flatnonzero(np.any(stacked != 0.0, axis=0))


@dataclass(frozen=True, eq=False)
class SpringEntry:
    name: str
    first: Attachment
    second: Attachment
    stiffness: float
    natural_length: float
    stiffness_rate: np.ndarray
    natural_length_rate: np.ndarray

    @property
    def dofs(self) -> np.ndarray:
        return np.concatenate([self.first.dofs, self.second.dofs]).astype(int)

    def delta(self, q: np.ndarray) -> np.ndarray:
        return self.first.position(q) - self.second.position(q)

    def _arguments(self, q: np.ndarray):
        return (
            q[self.first.dofs],
            q[self.second.dofs],
            self.first.shape,
            self.second.shape,
            self.stiffness,
            self.natural_length,
            self.first.offset - self.second.offset,
        )


@dataclass(frozen=True, eq=False)
class DamperEntry:
    name: str
    first: Attachment
    second: Attachment
    damping: float
    damping_rate: np.ndarray


@dataclass(frozen=True)
class ValidationReport:
    g_residual: float
    gdot_residual: float
    tolerance: float = config.VALIDATION_TOL

    @property
    def passed(self) -> bool:
        return self.g_residual <= self.tolerance and self.gdot_residual <= self.tolerance

    def to_dict(self) -> Dict[str, object]:
        return {
            "g_residual": self.g_residual,
            "gdot_residual": self.gdot_residual,
            "pass": self.passed,
        }

    def to_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"constraint residual |g(q0)|_inf      = {self.g_residual:.3e}\n"
            f"tangency residual   |G(q0) qdot0|_inf = {self.gdot_residual:.3e}\n"
            f"tolerance {self.tolerance:.1e}: {verdict}"
        )


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Immutable assembled system for one design vector.

    Rates carry a trailing (or leading, for matrices) design axis of length n_a.
    """

    model: ModelDefinition
    design: np.ndarray
    settings: SimSettings
    layouts: Dict[str, BodyLayout]
    node_positions: Dict[str, np.ndarray]
    node_rates: Dict[str, np.ndarray]
    mass: np.ndarray
    mass_rate: np.ndarray
    damping: np.ndarray
    damping_rate: np.ndarray
    gravity: np.ndarray
    gravity_force: np.ndarray
    gravity_rate: np.ndarray
    beam_elements: Tuple[BeamElementEntry, ...]
    springs: Tuple[SpringEntry, ...]
    dampers: Tuple[DamperEntry, ...]
    constraints: ConstraintSet
    q0: np.ndarray
    qdot0: np.ndarray
    dq0_da: np.ndarray
    dqdot0_da: np.ndarray
    beam_lengths: Dict[str, Tuple[float, np.ndarray]] = field(default_factory=dict)

    @property
    def dof_count(self) -> int:
        return self.q0.size

    @property
    def constraint_count(self) -> int:
        return self.constraints.count

    @property
    def design_count(self) -> int:
        return self.design.size

    @property
    def design_ids(self) -> Tuple[str, ...]:
        return tuple(binding.id for binding in self.model.design_variables)

    @property
    def h(self) -> float:
        return self.settings.h

    @property
    def alpha(self) -> float:
        return self.settings.alpha

    @property
    def step_count(self) -> int:
        return self.settings.step_count

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.step_count + 1)

    # -- potential ---------------------------------------------------------

    def potential_energy(self, q: np.ndarray) -> float:
        energy = float(self.gravity_force @ q)
        for entry in self.beam_elements:
            energy += beam_elastic_energy(q[entry.dofs], entry.element)
        for spring in self.springs:
            energy += spring_energy(*spring._arguments(q))
        return energy

    def potential_gradient(self, q: np.ndarray) -> np.ndarray:
        grad = self.gravity_force.copy()
        for entry in self.beam_elements:
            grad[entry.dofs] += beam_elastic_force(q[entry.dofs], entry.element)
        for spring in self.springs:
            np.add.at(grad, spring.dofs, spring_force(*spring._arguments(q)))
        return grad

    def potential_hessian(self, q: np.ndarray) -> np.ndarray:
        hess = np.zeros((self.dof_count, self.dof_count))
        for entry in self.beam_elements:
            hess[np.ix_(entry.dofs, entry.dofs)] += beam_elastic_stiffness(
                q[entry.dofs], entry.element
            )
        for spring in self.springs:
            dofs = spring.dofs
            np.add.at(
                hess,
                (dofs[:, None], dofs[None, :]),
                spring_stiffness(*spring._arguments(q)),
            )
        return hess

    def potential_design_gradient(self, q: np.ndarray) -> np.ndarray:
        """Explicit d(dU/dq)/da at fixed q (m x n_a)."""
        out = self.gravity_rate.copy()
        for entry in self.beam_elements:
            active = entry.active
            if active.size == 0:
                continue
            partials = beam_elastic_force_partials(q[entry.dofs], entry.element)
            block = np.zeros((12, self.design_count))
            for name in BEAM_PARAMETERS:
                block += np.outer(partials[name], entry.rates[name])
            out[entry.dofs] += block
        for spring in self.springs:
            _add_spring_design_gradient(out, spring, q)
        return out

    # -- lookups -----------------------------------------------------------

    def body(self, name: str) -> BodyLayout:
        try:
            return self.layouts[name]
        except KeyError as exc:
            raise ModelError(f"unknown body {name!r}") from exc

    def beam_node_dofs(self, beam: str, node: str) -> np.ndarray:
        layout = self.body(beam)
        if layout.kind != BEAM:
            raise ModelError(f"{beam!r} is not a beam")
        start = layout.node_offset(node)
        return np.arange(start, start + 6)

    def beam_length(self, beam: str) -> Tuple[float, np.ndarray]:
        """Undeformed beam length and its design rate."""
        return self.beam_lengths[beam]

    def attachment(self, ref: AttachmentRef) -> Attachment:
        return _resolve_attachment(ref, self.layouts, self.node_positions, self.node_rates, self.design_count)

    def joint_rows(self, name: str) -> np.ndarray:
        return self.constraints.rows_for(name)


def _add_spring_design_gradient(out: np.ndarray, spring: SpringEntry, q: np.ndarray) -> None:
    first, second = spring.first, spring.second
    delta = spring.delta(q)
    length = float(np.linalg.norm(delta))
    tension = spring_tension(delta, spring.stiffness, spring.natural_length)
    tangent = spring_tangent(delta, spring.stiffness, spring.natural_length)
    d_delta = first.position_rate(q) - second.position_rate(q)
    d_tension = (
        tangent @ d_delta
        + np.outer((1.0 - spring.natural_length / length) * delta, spring.stiffness_rate)
        - np.outer(spring.stiffness * delta / length, spring.natural_length_rate)
    )
    np.add.at(out, first.dofs, first.shape.T @ d_tension + first.shape_transpose_rate(tension))
    np.add.at(
        out, second.dofs, -(second.shape.T @ d_tension + second.shape_transpose_rate(tension))
    )


def _ground_point(
    ref: AttachmentRef,
    node_positions: Dict[str, np.ndarray],
    node_rates: Dict[str, np.ndarray],
    n_a: int,
) -> Tuple[np.ndarray, np.ndarray]:
    if ref.node is not None:
        return node_positions[ref.node], node_rates[ref.node]
    return np.asarray(ref.point, dtype=float), np.zeros((3, n_a))


def _resolve_attachment(
    ref: AttachmentRef,
    layouts: Dict[str, BodyLayout],
    node_positions: Dict[str, np.ndarray],
    node_rates: Dict[str, np.ndarray],
    n_a: int,
) -> Attachment:
    if ref.ground:
        position, rate = _ground_point(ref, node_positions, node_rates, n_a)
        return Attachment(
            dofs=np.zeros(0, dtype=int),
            shape=np.zeros((3, 0)),
            offset=position.copy(),
            offset_rate=rate.copy(),
            initial_position=position.copy(),
            initial_rate=rate.copy(),
            label=ref.describe(),
        )
    layout = layouts[ref.body]
    if layout.kind == BEAM:
        start = layout.node_offset(ref.node)
        position = node_positions[ref.node]
        rate = node_rates[ref.node]
        return Attachment(
            dofs=np.arange(start, start + 3),
            shape=np.eye(3),
            offset=np.zeros(3),
            offset_rate=np.zeros((3, n_a)),
            initial_position=position.copy(),
            initial_rate=rate.copy(),
            label=ref.describe(),
        )
    frame = layout.frame
    center = np.asarray(layout.rigid.center_of_mass, dtype=float)
    if ref.node is not None:
        position = node_positions[ref.node]
        rate = node_rates[ref.node]
        local = frame @ (position - center)
        local_rate = frame @ (rate - layout.center_rate)
    else:
        local = np.asarray(ref.point, dtype=float)
        local_rate = np.zeros((3, n_a))
        position = center + frame.T @ local
        rate = layout.center_rate.copy()
    return Attachment(
        dofs=layout.dofs,
        shape=rigid_shape_matrix(local),
        offset=np.zeros(3),
        offset_rate=np.zeros((3, n_a)),
        initial_position=position,
        initial_rate=rate,
        local=local,
        local_rate=local_rate,
        label=ref.describe(),
    )


def _node_geometry(
    model: ModelDefinition, a: np.ndarray
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    n_a = a.size
    positions = {name: np.asarray(value, dtype=float) for name, value in model.nodes}
    rates = {name: np.zeros((3, n_a)) for name in positions}
    for index, (binding, value) in enumerate(zip(model.design_variables, a)):
        if binding.kind in NODE_POSITION_KINDS:
            positions[binding.target] = positions[binding.target].copy()
            positions[binding.target][binding.axis] = float(value)
            rates[binding.target][binding.axis, index] = 1.0
    return positions, rates


def _binding_rates(model: ModelDefinition, kind: str, target: str, prop: Optional[str] = None) -> np.ndarray:
    rate = np.zeros(len(model.design_variables))
    for index, binding in enumerate(model.design_variables):
        if binding.kind == kind and binding.target == target and binding.parameter == prop:
            rate[index] = 1.0
    return rate


def _check_frame(name: str, frame: np.ndarray) -> None:
    if np.max(np.abs(frame @ frame.T - np.eye(3))) > config.FRAME_TOL:
        raise ModelError(f"frame of rigid body {name!r} is not orthonormal")
    if np.linalg.det(frame) < 0.0:
        raise ModelError(f"frame of rigid body {name!r} is not right-handed")


def _point(
    value, positions: Dict[str, np.ndarray], rates: Dict[str, np.ndarray], n_a: int
) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(value, str):
        return positions[value], rates[value]
    return np.asarray(value, dtype=float), np.zeros((3, n_a))


def _velocity_field(
    velocity: Optional[VelocitySpec],
    default_center: Tuple[np.ndarray, np.ndarray],
    positions: Dict[str, np.ndarray],
    rates: Dict[str, np.ndarray],
    n_a: int,
):
    """Rigid motion v + w x (x - p); returns callables for points and directions."""
    if velocity is None:
        velocity = VelocitySpec()
    linear = np.asarray(velocity.linear, dtype=float)
    omega = np.asarray(velocity.angular, dtype=float)
    if velocity.about is None:
        center, center_rate = default_center
    else:
        center, center_rate = _point(velocity.about, positions, rates, n_a)

    def point(x: np.ndarray, x_rate: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return linear + np.cross(omega, x - center), np.cross(omega, (x_rate - center_rate).T).T

    def direction(t: np.ndarray, t_rate: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return np.cross(omega, t), np.cross(omega, t_rate.T).T

    return point, direction


def _section_rates(beam: BeamSpec, model: ModelDefinition, n_a: int) -> Tuple[np.ndarray, np.ndarray]:
    area_rate = np.zeros(n_a)
    second_rate = np.zeros(n_a)
    section = beam.section
    if section.shape == "square":
        width_rate = _binding_rates(model, "beam_property", beam.name, "width")
        area_rate += 2.0 * section.width * width_rate
        second_rate += section.width**3 / 3.0 * width_rate
    elif section.shape == "generic":
        area_rate += _binding_rates(model, "beam_property", beam.name, "area")
        second_rate += _binding_rates(model, "beam_property", beam.name, "second_moment")
    return area_rate, second_rate


def assemble(model: ModelDefinition, a: Optional[Sequence[float]] = None) -> AssembledSystem:
    """Assemble the system at design vector ``a`` (binding initial values by default)."""
    space = design_space(model)
    design = space.initial.copy() if a is None else np.asarray(a, dtype=float).copy()
    if design.shape != (space.size,):
        raise ModelError(
            f"design vector has {design.size} entries, model declares {space.size} design variables"
        )
    model = with_design(model, design)
    n_a = design.size
    settings = model.simulation
    gravity = np.asarray(model.gravity, dtype=float)
    positions, rates = _node_geometry(model, design)

    layouts: Dict[str, BodyLayout] = {}
    offset = 0
    for body in model.bodies:
        if isinstance(body, RigidBodySpec):
            center, center_rate = _point(body.center_of_mass, positions, rates, n_a)
            frame = np.asarray(body.frame, dtype=float)
            _check_frame(body.name, frame)
            rigid = RigidBody(
                mass=body.mass,
                inertia=body.inertia,
                center_of_mass=tuple(center),
                frame=body.frame,
            )
            layouts[body.name] = BodyLayout(
                name=body.name, kind=RIGID, offset=offset, size=12, rigid=rigid, center_rate=center_rate
            )
            offset += 12
        else:
            nodes = tuple(body.node_names())
            layouts[body.name] = BodyLayout(
                name=body.name, kind=BEAM, offset=offset, size=6 * len(nodes), nodes=nodes
            )
            offset += 6 * len(nodes)
    m = offset

    mass = np.zeros((m, m))
    mass_rate = np.zeros((n_a, m, m))
    gravity_force = np.zeros(m)
    gravity_rate = np.zeros((m, n_a))
    q0 = np.zeros(m)
    qdot0 = np.zeros(m)
    dq0 = np.zeros((m, n_a))
    dqdot0 = np.zeros((m, n_a))
    beam_entries: List[BeamElementEntry] = []
    beam_lengths: Dict[str, Tuple[float, np.ndarray]] = {}

    for body in model.bodies:
        layout = layouts[body.name]
        dofs = layout.dofs
        if layout.kind == RIGID:
            rigid = layout.rigid
            center = np.asarray(rigid.center_of_mass)
            frame = layout.frame
            mass[np.ix_(dofs, dofs)] = rigid_mass(body.mass, *body.inertia)
            gravity_force[dofs] += rigid_gravity_force(body.mass, gravity)
            q0[dofs] = np.concatenate([center, frame.ravel()])
            dq0[dofs[0:3]] = layout.center_rate
            point, direction = _velocity_field(
                body.initial_velocity, (center, layout.center_rate), positions, rates, n_a
            )
            velocity, velocity_rate = point(center, layout.center_rate)
            qdot0[dofs[0:3]] = velocity
            dqdot0[dofs[0:3]] = velocity_rate
            for k in range(3):
                spin, _ = direction(frame[k], np.zeros((3, n_a)))
                qdot0[dofs[3 + 3 * k : 6 + 3 * k]] = spin
            continue

        start, start_rate = positions[body.start], rates[body.start]
        end, end_rate = positions[body.end], rates[body.end]
        chord = end - start
        total_length = float(np.linalg.norm(chord))
        if total_length / body.elements < config.MIN_BEAM_LENGTH:
            raise ModelError(
                f"beam {body.name!r} is degenerate: element length "
                f"{total_length / body.elements:.3e} m"
            )
        unit = length_derivative(start, end)
        chord_rate = end_rate - start_rate
        length_rate = unit @ chord_rate
        beam_lengths[body.name] = (total_length, length_rate)
        if body.slope is None:
            slope = unit
            slope_rate = (np.eye(3) - np.outer(unit, unit)) @ chord_rate / total_length
        else:
            slope = np.asarray(body.slope, dtype=float)
            slope_rate = np.zeros((3, n_a))

        area, second_moment = body.section.properties()
        area_rate, second_rate = _section_rates(body, model, n_a)
        element = BeamElement(
            length=total_length / body.elements,
            area=area,
            second_moment=second_moment,
            youngs_modulus=body.youngs_modulus,
            density=body.density,
            strain_measure=settings.strain_measure,
            literal_transverse=settings.literal_transverse,
        )
        element_rates = {
            "length": length_rate / body.elements,
            "area": area_rate,
            "second_moment": second_rate,
            "youngs_modulus": _binding_rates(model, "beam_property", body.name, "youngs_modulus"),
            "density": _binding_rates(model, "beam_property", body.name, "density"),
        }
        point, direction = _velocity_field(
            body.initial_velocity, (start, start_rate), positions, rates, n_a
        )
        slope_velocity, slope_velocity_rate = direction(slope, slope_rate)
        count = len(layout.nodes)
        for k, node in enumerate(layout.nodes):
            fraction = k / body.elements
            x = start + fraction * chord
            x_rate = start_rate + fraction * chord_rate
            if node not in positions:
                positions[node] = x
                rates[node] = x_rate
            base = layout.node_offset(node)
            q0[base : base + 3] = x
            q0[base + 3 : base + 6] = slope
            dq0[base : base + 3] = x_rate
            dq0[base + 3 : base + 6] = slope_rate
            velocity, velocity_rate = point(x, x_rate)
            qdot0[base : base + 3] = velocity
            qdot0[base + 3 : base + 6] = slope_velocity
            dqdot0[base : base + 3] = velocity_rate
            dqdot0[base + 3 : base + 6] = slope_velocity_rate
        element_mass = beam_mass(element.density, element.area, element.length)
        element_gravity = beam_gravity_force(element.density, element.area, element.length, gravity)
        for index in range(count - 1):
            element_dofs = np.arange(layout.offset + 6 * index, layout.offset + 6 * index + 12)
            mass[np.ix_(element_dofs, element_dofs)] += element_mass
            gravity_force[element_dofs] += element_gravity
            entry = BeamElementEntry(
                beam=body.name, index=index, dofs=element_dofs, element=element, rates=element_rates
            )
            for i in entry.active:
                derivatives = beam_design_derivatives(
                    q0[element_dofs],
                    element,
                    gravity,
                    {name: float(element_rates[name][i]) for name in BEAM_PARAMETERS},
                )
                mass_rate[i][np.ix_(element_dofs, element_dofs)] += derivatives.mass
                gravity_rate[element_dofs, i] += derivatives.gravity
            beam_entries.append(entry)

    def resolve(ref: AttachmentRef) -> Attachment:
        return _resolve_attachment(ref, layouts, positions, rates, n_a)

    springs: List[SpringEntry] = []
    dampers: List[DamperEntry] = []
    damping = np.zeros((m, m))
    damping_rate = np.zeros((n_a, m, m))
    for force in model.forces:
        first, second = resolve(force.a), resolve(force.b)
        if isinstance(force, SpringSpec):
            delta = first.initial_position - second.initial_position
            distance = float(np.linalg.norm(delta))
            if distance == 0.0:
                raise ModelError(f"spring {force.name!r} has coincident endpoints")
            if force.natural_length is None:
                natural_length = distance
                natural_length_rate = (delta / distance) @ (first.initial_rate - second.initial_rate)
            else:
                natural_length = force.natural_length
                natural_length_rate = np.zeros(n_a)
            if force.stiffness < 0.0 or natural_length <= 0.0:
                raise ModelError(f"spring {force.name!r} needs k >= 0 and l0 > 0")
            springs.append(
                SpringEntry(
                    name=force.name,
                    first=first,
                    second=second,
                    stiffness=force.stiffness,
                    natural_length=natural_length,
                    stiffness_rate=_binding_rates(model, "spring_constant", force.name),
                    natural_length_rate=natural_length_rate,
                )
            )
        elif isinstance(force, DamperSpec):
            if force.damping < 0.0:
                raise ModelError(f"damper {force.name!r} needs c >= 0")
            damping_rates = _binding_rates(model, "damping_coefficient", force.name)
            pair = _global_pair(first, second, m)
            damping += force.damping * pair.T @ pair
            for i in range(n_a):
                d_pair = _global_pair_rate(first, second, m, i)
                damping_rate[i] += damping_rates[i] * pair.T @ pair + force.damping * (
                    d_pair.T @ pair + pair.T @ d_pair
                )
            dampers.append(
                DamperEntry(
                    name=force.name,
                    first=first,
                    second=second,
                    damping=force.damping,
                    damping_rate=damping_rates,
                )
            )

    builder = ConstraintSetBuilder(m, n_a)
    for body in model.bodies:
        layout = layouts[body.name]
        if layout.kind == RIGID:
            builder.add_internal(f"{body.name}/orthonormality", layout.offset)
    for joint in model.joints:
        a_ref, b_ref = joint.a, joint.b
        if a_ref.ground:
            a_ref, b_ref = b_ref, a_ref
        first, second = resolve(a_ref), resolve(b_ref)
        refs = (a_ref.describe(), b_ref.describe())
        if second.is_ground:
            excitation = None
            if joint.excitation is not None:
                excitation = Excitation(
                    amplitude=joint.excitation.amplitude,
                    angular_frequency=joint.excitation.angular_frequency,
                    direction=joint.excitation.direction,
                )
            builder.add_ground_anchor(
                joint.name,
                first,
                second,
                refs,
                components=joint.components or (0, 1, 2),
                excitation=excitation,
            )
        else:
            builder.add_spherical(joint.name, first, second, refs)
        if joint.kind == "welded":
            beam_ref = joint.b
            frame_ref = joint.a
            slope_dofs = beam_node_slope_dofs(layouts[beam_ref.body], beam_ref.node)
            frame_offset = None if frame_ref.ground else layouts[frame_ref.body].offset
            builder.add_welded(joint.name, frame_offset, slope_dofs, refs)
    constraints = builder.build(q0, dq0)

    system = AssembledSystem(
        model=model,
        design=design,
        settings=settings,
        layouts=layouts,
        node_positions=positions,
        node_rates=rates,
        mass=mass,
        mass_rate=mass_rate,
        damping=damping,
        damping_rate=damping_rate,
        gravity=gravity,
        gravity_force=gravity_force,
        gravity_rate=gravity_rate,
        beam_elements=tuple(beam_entries),
        springs=tuple(springs),
        dampers=tuple(dampers),
        constraints=constraints,
        q0=q0,
        qdot0=qdot0,
        dq0_da=dq0,
        dqdot0_da=dqdot0,
        beam_lengths=beam_lengths,
    )
    logger.debug(
        "Assembled %s: m=%d l=%d n_a=%d", model.name, m, constraints.count, n_a
    )
    return system


def beam_node_slope_dofs(layout: BodyLayout, node: str) -> np.ndarray:
    start = layout.node_offset(node) + 3
    return np.arange(start, start + 3)


def _global_pair(first: Attachment, second: Attachment, m: int) -> np.ndarray:
    pair = np.zeros((3, m))
    np.add.at(pair, (slice(None), first.dofs), first.shape)
    np.add.at(pair, (slice(None), second.dofs), -second.shape)
    return pair


def _global_pair_rate(first: Attachment, second: Attachment, m: int, index: int) -> np.ndarray:
    pair = np.zeros((3, m))
    np.add.at(pair, (slice(None), first.dofs), first.shape_rate(index))
    np.add.at(pair, (slice(None), second.dofs), -second.shape_rate(index))
    return pair


def validate_initial_conditions(
    system: AssembledSystem, tolerance: float = config.VALIDATION_TOL
) -> ValidationReport:
    constraints = system.constraints
    if constraints.count == 0:
        return ValidationReport(g_residual=0.0, gdot_residual=0.0, tolerance=tolerance)
    g = constraints.evaluate(system.q0, 0.0)
    gdot = constraints.jacobian(system.q0) @ system.qdot0 - constraints.velocity_bias(0.0)
    return ValidationReport(
        g_residual=float(np.max(np.abs(g))),
        gdot_residual=float(np.max(np.abs(gdot))),
        tolerance=tolerance,
    )
