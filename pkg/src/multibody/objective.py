"""Discrete objective and constraint functionals with analytic partials.

Running terms use the integrator's one-point rule: interval j contributes
h * H(mid_j, v_j, lam_j). Sampled terms read the state at a stored step k, the
velocity there being (q_k - q_{k-1}) / h (qdot0 at k = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .assembly import AssembledSystem
from .elements import beam_strain, beam_strain_gradient
from .errors import ModelError
from .integrator import Trajectory
from .model import AttachmentRef, TermSpec


@dataclass(eq=False)
class Partials:
    """Partials of a discrete functional with respect to everything it reads."""

    dq: np.ndarray
    dlam: np.ndarray
    dqdot0: np.ndarray
    da: np.ndarray

    @classmethod
    def zeros(cls, traj: Trajectory, system: AssembledSystem) -> "Partials":
        return cls(
            dq=np.zeros_like(traj.q),
            dlam=np.zeros_like(traj.lam),
            dqdot0=np.zeros(system.dof_count),
            da=np.zeros(system.design_count),
        )

    def __add__(self, other: "Partials") -> "Partials":
        return Partials(
            dq=self.dq + other.dq,
            dlam=self.dlam + other.dlam,
            dqdot0=self.dqdot0 + other.dqdot0,
            da=self.da + other.da,
        )


def sample_index(at: Union[str, float, None], traj: Trajectory) -> int:
    count = traj.step_count
    if at is None or at == "final":
        return count
    if at == "initial":
        return 0
    index = int(round(float(at) / traj.h))
    if not 0 <= index <= count or abs(index * traj.h - float(at)) > 1e-9 * max(1.0, float(at)):
        raise ModelError(f"sample time {at} is not a stored step of [0, {count * traj.h}]")
    return index


def _sample_velocity(traj: Trajectory, k: int) -> np.ndarray:
    if k == 0:
        return traj.qdot0
    return (traj.q[k] - traj.q[k - 1]) / traj.h


def _add_sample_velocity_partial(partials: Partials, traj: Trajectory, k: int, dofs, grad) -> None:
    if k == 0:
        partials.dqdot0[dofs] += grad
        return
    partials.dq[k, dofs] += grad / traj.h
    partials.dq[k - 1, dofs] -= grad / traj.h


class ObjectiveTerm:
    weight: float = 1.0

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        raise NotImplementedError

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        raise NotImplementedError


@dataclass(frozen=True)
class PointDisplacement(ObjectiveTerm):
    """Squared displacement of a point from its initial position."""

    point: AttachmentRef
    weight: float = 1.0
    at: Optional[Union[str, float]] = None
    running: bool = True

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        attachment = system.attachment(self.point)
        if not self.running:
            d = attachment.position(traj.q[sample_index(self.at, traj)]) - attachment.initial_position
            return self.weight * float(d @ d)
        total = 0.0
        for j in range(traj.step_count):
            d = attachment.position(traj.midpoint(j)) - attachment.initial_position
            total += float(d @ d)
        return self.weight * traj.h * total

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        attachment = system.attachment(self.point)
        dofs = attachment.dofs
        if not self.running:
            k = sample_index(self.at, traj)
            d = attachment.position(traj.q[k]) - attachment.initial_position
            partials.dq[k, dofs] += 2.0 * self.weight * attachment.shape.T @ d
            d_rate = attachment.position_rate(traj.q[k]) - attachment.initial_rate
            partials.da += 2.0 * self.weight * d @ d_rate
            return
        scale = 2.0 * self.weight * traj.h
        alpha = traj.alpha
        for j in range(traj.step_count):
            mid = traj.midpoint(j)
            d = attachment.position(mid) - attachment.initial_position
            grad = scale * attachment.shape.T @ d
            partials.dq[j, dofs] += (1.0 - alpha) * grad
            partials.dq[j + 1, dofs] += alpha * grad
            partials.da += scale * d @ (attachment.position_rate(mid) - attachment.initial_rate)


@dataclass(frozen=True)
class PointVelocity(ObjectiveTerm):
    """Squared speed of a point."""

    point: AttachmentRef
    weight: float = 1.0
    at: Optional[Union[str, float]] = None
    running: bool = True

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        attachment = system.attachment(self.point)
        if not self.running:
            v = attachment.velocity(_sample_velocity(traj, sample_index(self.at, traj)))
            return self.weight * float(v @ v)
        total = 0.0
        for j in range(traj.step_count):
            v = attachment.velocity(traj.velocity(j))
            total += float(v @ v)
        return self.weight * traj.h * total

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        attachment = system.attachment(self.point)
        dofs = attachment.dofs
        if not self.running:
            k = sample_index(self.at, traj)
            qdot = _sample_velocity(traj, k)
            v = attachment.velocity(qdot)
            grad = 2.0 * self.weight * attachment.shape.T @ v
            _add_sample_velocity_partial(partials, traj, k, dofs, grad)
            partials.da += 2.0 * self.weight * v @ attachment.position_rate(qdot, include_offset=False)
            return
        for j in range(traj.step_count):
            qdot = traj.velocity(j)
            v = attachment.velocity(qdot)
            grad = 2.0 * self.weight * attachment.shape.T @ v
            partials.dq[j + 1, dofs] += grad
            partials.dq[j, dofs] -= grad
            partials.da += (
                2.0 * self.weight * traj.h * v @ attachment.position_rate(qdot, include_offset=False)
            )


@dataclass(frozen=True)
class JointReaction(ObjectiveTerm):
    """Squared multipliers of one joint, integrated over time."""

    joint: str
    weight: float = 1.0

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        rows = system.joint_rows(self.joint)
        return self.weight * traj.h * float(np.sum(traj.lam[:, rows] ** 2))

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        rows = system.joint_rows(self.joint)
        partials.dlam[:, rows] += 2.0 * self.weight * traj.h * traj.lam[:, rows]


@dataclass(frozen=True)
class TipDeflection(ObjectiveTerm):
    """Lateral offset of a tip point seen from a beam root node.

    The lateral direction is normal x s / |s|, s being the root slope, so the
    value is a signed deflection within the plane with the given normal.
    """

    root: AttachmentRef
    tip: AttachmentRef
    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    weight: float = 1.0
    at: Optional[Union[str, float]] = None

    def _parts(self, system: AssembledSystem, q: np.ndarray):
        root = system.attachment(self.root)
        tip = system.attachment(self.tip)
        slope_dofs = system.beam_node_dofs(self.root.body, self.root.node)[3:6]
        normal = np.asarray(self.normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        arm = tip.position(q) - root.position(q)
        slope = q[slope_dofs]
        return root, tip, slope_dofs, normal, arm, slope

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        q = traj.q[sample_index(self.at, traj)]
        _, _, _, normal, arm, slope = self._parts(system, q)
        return self.weight * float(arm @ np.cross(normal, slope)) / float(np.linalg.norm(slope))

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        k = sample_index(self.at, traj)
        q = traj.q[k]
        root, tip, slope_dofs, normal, arm, slope = self._parts(system, q)
        size = float(np.linalg.norm(slope))
        lateral = np.cross(normal, slope)
        d_arm = self.weight * lateral / size
        d_slope = self.weight * (
            np.cross(arm, normal) / size - float(arm @ lateral) * slope / size**3
        )
        np.add.at(partials.dq[k], tip.dofs, tip.shape.T @ d_arm)
        np.add.at(partials.dq[k], root.dofs, -(root.shape.T @ d_arm))
        partials.dq[k, slope_dofs] += d_slope
        partials.da += d_arm @ (tip.position_rate(q) - root.position_rate(q))


@dataclass(frozen=True)
class StressMeasure(ObjectiveTerm):
    """Smoothed maximum of |sigma| / limit over a beam's elements and all stored states, minus 1."""

    body: str
    limit: float
    exponent: float = config.STRESS_NORM_EXPONENT
    weight: float = 1.0

    def _ratios(self, traj: Trajectory, system: AssembledSystem):
        entries = [entry for entry in system.beam_elements if entry.beam == self.body]
        strains = np.array(
            [[beam_strain(q[entry.dofs], entry.element.length) for entry in entries] for q in traj.q]
        )
        moduli = np.array([entry.element.youngs_modulus for entry in entries])
        return entries, strains, np.abs(strains * moduli) / self.limit

    @staticmethod
    def _norm(ratios: np.ndarray, exponent: float) -> float:
        peak = float(np.max(ratios))
        if peak == 0.0:
            return 0.0
        return peak * float(np.sum((ratios / peak) ** exponent)) ** (1.0 / exponent)

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        _, _, ratios = self._ratios(traj, system)
        return self.weight * (self._norm(ratios, self.exponent) - 1.0)

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        entries, strains, ratios = self._ratios(traj, system)
        norm = self._norm(ratios, self.exponent)
        if norm == 0.0:
            return
        sensitivity = self.weight * (ratios / norm) ** (self.exponent - 1.0)
        for n, q in enumerate(traj.q):
            for e, entry in enumerate(entries):
                if sensitivity[n, e] == 0.0:
                    continue
                element = entry.element
                sign = np.sign(strains[n, e])
                factor = sensitivity[n, e] * sign / self.limit
                partials.dq[n, entry.dofs] += (
                    factor * element.youngs_modulus * beam_strain_gradient(q[entry.dofs], element.length)
                )
                d_strain = -(strains[n, e] + 1.0) / element.length * entry.rates["length"]
                partials.da += factor * (
                    entry.rates["youngs_modulus"] * strains[n, e] + element.youngs_modulus * d_strain
                )


@dataclass(frozen=True)
class MinimumLength(ObjectiveTerm):
    """l_min - L for a beam's undeformed length L."""

    body: str
    minimum: float
    weight: float = 1.0

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        length, _ = system.beam_length(self.body)
        return self.weight * (self.minimum - length)

    def accumulate(self, traj: Trajectory, system: AssembledSystem, partials: Partials) -> None:
        _, rate = system.beam_length(self.body)
        partials.da -= self.weight * rate


@dataclass(frozen=True)
class ObjectiveSpec:
    terms: Tuple[ObjectiveTerm, ...]

    def evaluate(self, traj: Trajectory, system: AssembledSystem) -> float:
        return float(sum(term.evaluate(traj, system) for term in self.terms))

    def partials(self, traj: Trajectory, system: AssembledSystem) -> Partials:
        partials = Partials.zeros(traj, system)
        for term in self.terms:
            term.accumulate(traj, system, partials)
        return partials

    @classmethod
    def from_terms(cls, specs: Sequence[TermSpec]) -> "ObjectiveSpec":
        return cls(terms=tuple(build_term(spec) for spec in specs))


def build_term(spec: TermSpec) -> ObjectiveTerm:
    running = spec.mode == "integral"
    builders: Dict[str, object] = {
        "displacement_squared": lambda: PointDisplacement(
            point=spec.point, weight=spec.weight, at=spec.at, running=running
        ),
        "velocity_squared": lambda: PointVelocity(
            point=spec.point, weight=spec.weight, at=spec.at, running=running
        ),
        "reaction_squared": lambda: JointReaction(joint=spec.joint, weight=spec.weight),
        "tip_deflection": lambda: TipDeflection(
            root=spec.root,
            tip=spec.tip,
            normal=spec.normal or (0.0, 0.0, 1.0),
            weight=spec.weight,
            at=spec.at,
        ),
        "stress_measure": lambda: StressMeasure(
            body=spec.body,
            limit=spec.limit,
            exponent=spec.exponent or config.STRESS_NORM_EXPONENT,
            weight=spec.weight,
        ),
        "min_length": lambda: MinimumLength(body=spec.body, minimum=spec.minimum, weight=spec.weight),
    }
    if spec.kind not in builders:
        raise ModelError(f"unknown term kind {spec.kind!r}")
    return builders[spec.kind]()


def sampled_variants(spec: TermSpec, times: Sequence[float]) -> Tuple[ObjectiveSpec, ...]:
    """One single-term objective per sample time, for multi-time sensitivity sweeps."""
    return tuple(ObjectiveSpec.from_terms([replace(spec, at=t, mode="terminal")]) for t in times)
