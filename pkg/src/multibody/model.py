"""Model definition: parsing, validation of references, serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .elements import STRAIN_MEASURES, STRAIN_AVERAGED
from .errors import ModelError

Vec3 = Tuple[float, float, float]

NODE_POSITION_KINDS = ("node_position_X", "node_position_Y", "node_position_Z")
BINDING_KINDS = NODE_POSITION_KINDS + (
    "spring_constant",
    "damping_coefficient",
    "beam_property",
)
BEAM_BINDING_PROPERTIES = ("density", "youngs_modulus", "area", "second_moment", "width")
SECTION_SHAPES = ("square", "circular_tube", "generic")
JOINT_KINDS = ("spherical", "welded")
RUNNING_TERMS = ("displacement_squared", "velocity_squared", "reaction_squared")
SAMPLED_TERMS = ("displacement_squared", "velocity_squared", "tip_deflection")
CONSTRAINT_TERMS = ("stress_measure", "min_length")
GRADIENT_METHODS = ("adjoint", "direct", "fd")


@dataclass(frozen=True)
class AttachmentRef:
    body: Optional[str] = None
    node: Optional[str] = None
    point: Optional[Vec3] = None
    ground: bool = False

    def to_dict(self) -> Dict[str, Any]:
        if self.ground:
            return {"ground": self.node if self.node is not None else list(self.point)}
        if self.node is not None:
            return {"body": self.body, "node": self.node}
        return {"body": self.body, "local": list(self.point)}

    def describe(self) -> str:
        if self.ground:
            return f"ground:{self.node or list(self.point)}"
        return f"{self.body}:{self.node or list(self.point)}"


@dataclass(frozen=True)
class VelocitySpec:
    linear: Vec3 = (0.0, 0.0, 0.0)
    angular: Vec3 = (0.0, 0.0, 0.0)
    about: Optional[Union[str, Vec3]] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"linear": list(self.linear), "angular": list(self.angular)}
        if self.about is not None:
            data["about"] = self.about if isinstance(self.about, str) else list(self.about)
        return data


@dataclass(frozen=True)
class SectionSpec:
    shape: str
    width: Optional[float] = None
    outer_radius: Optional[float] = None
    inner_radius: Optional[float] = None
    area: Optional[float] = None
    second_moment: Optional[float] = None

    def properties(self) -> Tuple[float, float]:
        if self.shape == "square":
            return self.width**2, self.width**4 / 12.0
        if self.shape == "circular_tube":
            outer, inner = self.outer_radius, self.inner_radius
            return math.pi * (outer**2 - inner**2), math.pi / 4.0 * (outer**4 - inner**4)
        return self.area, self.second_moment

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"shape": self.shape}
        for key in ("width", "outer_radius", "inner_radius", "area", "second_moment"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        return data


@dataclass(frozen=True)
class RigidBodySpec:
    name: str
    mass: float
    inertia: Vec3
    center_of_mass: Union[str, Vec3]
    frame: Tuple[Vec3, Vec3, Vec3] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    initial_velocity: Optional[VelocitySpec] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "name": self.name,
            "type": "rigid",
            "mass": self.mass,
            "inertia": list(self.inertia),
            "center_of_mass": (
                self.center_of_mass
                if isinstance(self.center_of_mass, str)
                else list(self.center_of_mass)
            ),
            "frame": [list(row) for row in self.frame],
        }
        if self.initial_velocity is not None:
            data["initial_velocity"] = self.initial_velocity.to_dict()
        return data


@dataclass(frozen=True)
class BeamSpec:
    name: str
    start: str
    end: str
    elements: int
    density: float
    youngs_modulus: float
    section: SectionSpec
    slope: Optional[Vec3] = None
    initial_velocity: Optional[VelocitySpec] = None

    def node_names(self) -> List[str]:
        interior = [f"{self.name}#{k}" for k in range(1, self.elements)]
        return [self.start, *interior, self.end]

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "name": self.name,
            "type": "beam",
            "start": self.start,
            "end": self.end,
            "elements": self.elements,
            "density": self.density,
            "youngs_modulus": self.youngs_modulus,
            "section": self.section.to_dict(),
        }
        if self.slope is not None:
            data["slope"] = list(self.slope)
        if self.initial_velocity is not None:
            data["initial_velocity"] = self.initial_velocity.to_dict()
        return data


BodySpec = Union[RigidBodySpec, BeamSpec]


@dataclass(frozen=True)
class ExcitationSpec:
    amplitude: float
    angular_frequency: float
    direction: Vec3 = (0.0, 0.0, 1.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "amplitude": self.amplitude,
            "angular_frequency": self.angular_frequency,
            "direction": list(self.direction),
        }


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str
    a: AttachmentRef
    b: AttachmentRef
    components: Optional[Tuple[int, ...]] = None
    excitation: Optional[ExcitationSpec] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "name": self.name,
            "type": self.kind,
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
        }
        if self.components is not None:
            data["components"] = list(self.components)
        if self.excitation is not None:
            data["excitation"] = self.excitation.to_dict()
        return data


@dataclass(frozen=True)
class SpringSpec:
    name: str
    a: AttachmentRef
    b: AttachmentRef
    stiffness: float
    natural_length: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "name": self.name,
            "type": "spring",
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "stiffness": self.stiffness,
        }
        if self.natural_length is not None:
            data["natural_length"] = self.natural_length
        return data


@dataclass(frozen=True)
class DamperSpec:
    name: str
    a: AttachmentRef
    b: AttachmentRef
    damping: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "type": "damper",
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "damping": self.damping,
        }


ForceSpec = Union[SpringSpec, DamperSpec]


@dataclass(frozen=True)
class DesignVarBinding:
    id: str
    kind: str
    target: str
    initial: float
    lb: float
    ub: float
    parameter: Optional[str] = None

    @property
    def axis(self) -> int:
        return NODE_POSITION_KINDS.index(self.kind)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "id": self.id,
            "kind": self.kind,
            "target": self.target,
            "initial": self.initial,
            "lb": self.lb,
            "ub": self.ub,
        }
        if self.parameter is not None:
            data["property"] = self.parameter
        return data


@dataclass(frozen=True)
class SimSettings:
    T: float
    h: float
    alpha: float = config.DEFAULT_ALPHA
    newton_tol: float = config.NEWTON_TOL
    max_newton_iters: int = config.MAX_NEWTON_ITERS
    strain_measure: str = STRAIN_AVERAGED
    literal_transverse: bool = False

    @property
    def step_count(self) -> int:
        return int(round(self.T / self.h))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T": self.T,
            "h": self.h,
            "alpha": self.alpha,
            "newton_tol": self.newton_tol,
            "max_newton_iters": self.max_newton_iters,
            "strain_measure": self.strain_measure,
            "literal_transverse": self.literal_transverse,
        }


@dataclass(frozen=True)
class TermSpec:
    """One objective or constraint functional term as written in the model file."""

    kind: str
    weight: float = 1.0
    mode: str = "integral"
    at: Optional[Union[str, float]] = None
    point: Optional[AttachmentRef] = None
    joint: Optional[str] = None
    root: Optional[AttachmentRef] = None
    tip: Optional[AttachmentRef] = None
    normal: Optional[Vec3] = None
    body: Optional[str] = None
    limit: Optional[float] = None
    exponent: Optional[float] = None
    minimum: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind, "weight": self.weight, "mode": self.mode}
        for key in ("at", "joint", "body", "limit", "exponent", "minimum"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        for key in ("point", "root", "tip"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value.to_dict()
        if self.normal is not None:
            data["normal"] = list(self.normal)
        return data


@dataclass(frozen=True)
class OptSettings:
    max_iters: int = config.OPT_MAX_ITERS
    tolerance: float = config.OPT_IMPROVEMENT_TOL
    patience: int = config.OPT_PATIENCE
    initial_step: float = config.OPT_INITIAL_STEP
    gradient: str = "adjoint"
    constraints: Tuple[TermSpec, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
            "patience": self.patience,
            "initial_step": self.initial_step,
            "gradient": self.gradient,
            "constraints": [term.to_dict() for term in self.constraints],
        }


@dataclass(frozen=True)
class ModelDefinition:
    name: str
    nodes: Tuple[Tuple[str, Vec3], ...]
    bodies: Tuple[BodySpec, ...]
    joints: Tuple[JointSpec, ...] = ()
    forces: Tuple[ForceSpec, ...] = ()
    gravity: Vec3 = (0.0, 0.0, 0.0)
    design_variables: Tuple[DesignVarBinding, ...] = ()
    simulation: SimSettings = field(default_factory=lambda: SimSettings(T=1.0, h=1e-3))
    objective: Tuple[TermSpec, ...] = ()
    optimization: Optional[OptSettings] = None
    version: int = config.MODEL_FORMAT_VERSION

    def node_map(self) -> Dict[str, Vec3]:
        return dict(self.nodes)

    def body(self, name: str) -> BodySpec:
        for body in self.bodies:
            if body.name == name:
                return body
        raise KeyError(name)

    def force(self, name: str) -> ForceSpec:
        for force in self.forces:
            if force.name == name:
                return force
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "version": self.version,
            "name": self.name,
            "nodes": {name: list(position) for name, position in self.nodes},
            "bodies": [body.to_dict() for body in self.bodies],
            "joints": [joint.to_dict() for joint in self.joints],
            "forces": [force.to_dict() for force in self.forces],
            "gravity": list(self.gravity),
            "design_variables": [binding.to_dict() for binding in self.design_variables],
            "simulation": self.simulation.to_dict(),
            "objective": {"terms": [term.to_dict() for term in self.objective]},
        }
        if self.optimization is not None:
            data["optimization"] = self.optimization.to_dict()
        return data


@dataclass(frozen=True)
class DesignSpace:
    ids: Tuple[str, ...]
    initial: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ids)

    def clip(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.lower, self.upper)


def _fail(message: str, path: str) -> None:
    raise ModelError(message, location=path)


def _mapping(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        _fail("expected an object", path)
    return value


def _list(value: Any, path: str) -> List[Any]:
    if not isinstance(value, list):
        _fail("expected a list", path)
    return value


def _require(data: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in data:
        _fail(f"missing required key {key!r}", path)
    return data[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"expected a number, got {value!r}", path)
    number = float(value)
    if not math.isfinite(number):
        _fail("expected a finite number", path)
    return number


def _optional_number(data: Mapping[str, Any], key: str, path: str) -> Optional[float]:
    if key not in data or data[key] is None:
        return None
    return _number(data[key], f"{path}.{key}")


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(f"expected an integer, got {value!r}", path)
    return value


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value:
        _fail(f"expected a non-empty string, got {value!r}", path)
    return value


def _vec3(value: Any, path: str) -> Vec3:
    items = _list(value, path)
    if len(items) != 3:
        _fail("expected three components", path)
    return tuple(_number(item, f"{path}[{index}]") for index, item in enumerate(items))


def _node_or_point(value: Any, path: str) -> Union[str, Vec3]:
    if isinstance(value, str):
        return value
    return _vec3(value, path)


def _parse_attachment(value: Any, path: str) -> AttachmentRef:
    data = _mapping(value, path)
    if "ground" in data:
        target = _node_or_point(data["ground"], f"{path}.ground")
        if isinstance(target, str):
            return AttachmentRef(node=target, ground=True)
        return AttachmentRef(point=target, ground=True)
    body = _string(_require(data, "body", path), f"{path}.body")
    if "node" in data:
        return AttachmentRef(body=body, node=_string(data["node"], f"{path}.node"))
    if "local" in data:
        return AttachmentRef(body=body, point=_vec3(data["local"], f"{path}.local"))
    _fail("attachment needs 'node' or 'local'", path)


def _parse_velocity(value: Any, path: str) -> VelocitySpec:
    data = _mapping(value, path)
    about = None
    if "about" in data:
        about = _node_or_point(data["about"], f"{path}.about")
    return VelocitySpec(
        linear=_vec3(data.get("linear", [0.0, 0.0, 0.0]), f"{path}.linear"),
        angular=_vec3(data.get("angular", [0.0, 0.0, 0.0]), f"{path}.angular"),
        about=about,
    )


def _parse_section(value: Any, path: str) -> SectionSpec:
    data = _mapping(value, path)
    shape = _string(_require(data, "shape", path), f"{path}.shape")
    if shape not in SECTION_SHAPES:
        _fail(f"unknown section shape {shape!r}", f"{path}.shape")
    required = {
        "square": ("width",),
        "circular_tube": ("outer_radius", "inner_radius"),
        "generic": ("area", "second_moment"),
    }[shape]
    values = {key: _optional_number(data, key, path) for key in required}
    for key in required:
        if values[key] is None:
            _fail(f"missing required key {key!r}", path)
    return SectionSpec(shape=shape, **values)


def _parse_body(value: Any, path: str) -> BodySpec:
    data = _mapping(value, path)
    name = _string(_require(data, "name", path), f"{path}.name")
    kind = _require(data, "type", path)
    velocity = None
    if "initial_velocity" in data:
        velocity = _parse_velocity(data["initial_velocity"], f"{path}.initial_velocity")
    if kind == "rigid":
        frame_raw = data.get("frame", [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        frame_rows = _list(frame_raw, f"{path}.frame")
        if len(frame_rows) != 3:
            _fail("frame needs three rows", f"{path}.frame")
        return RigidBodySpec(
            name=name,
            mass=_number(_require(data, "mass", path), f"{path}.mass"),
            inertia=_vec3(_require(data, "inertia", path), f"{path}.inertia"),
            center_of_mass=_node_or_point(
                _require(data, "center_of_mass", path), f"{path}.center_of_mass"
            ),
            frame=tuple(
                _vec3(row, f"{path}.frame[{index}]") for index, row in enumerate(frame_rows)
            ),
            initial_velocity=velocity,
        )
    if kind == "beam":
        elements = _integer(data.get("elements", 1), f"{path}.elements")
        if elements < 1:
            _fail("a beam needs at least one element", f"{path}.elements")
        slope = _vec3(data["slope"], f"{path}.slope") if "slope" in data else None
        return BeamSpec(
            name=name,
            start=_string(_require(data, "start", path), f"{path}.start"),
            end=_string(_require(data, "end", path), f"{path}.end"),
            elements=elements,
            density=_number(_require(data, "density", path), f"{path}.density"),
            youngs_modulus=_number(
                _require(data, "youngs_modulus", path), f"{path}.youngs_modulus"
            ),
            section=_parse_section(_require(data, "section", path), f"{path}.section"),
            slope=slope,
            initial_velocity=velocity,
        )
    _fail(f"unknown body type {kind!r}", f"{path}.type")


def _parse_joint(value: Any, path: str) -> JointSpec:
    data = _mapping(value, path)
    kind = _require(data, "type", path)
    if kind not in JOINT_KINDS:
        _fail(f"unknown joint type {kind!r}", f"{path}.type")
    components = None
    if "components" in data:
        raw = _list(data["components"], f"{path}.components")
        components = tuple(_integer(item, f"{path}.components") for item in raw)
        if not components or len(set(components)) != len(components) or not set(
            components
        ) <= {0, 1, 2}:
            _fail("components must be distinct axis indices 0, 1, 2", f"{path}.components")
    excitation = None
    if "excitation" in data:
        raw = _mapping(data["excitation"], f"{path}.excitation")
        excitation = ExcitationSpec(
            amplitude=_number(_require(raw, "amplitude", path), f"{path}.excitation.amplitude"),
            angular_frequency=_number(
                _require(raw, "angular_frequency", path), f"{path}.excitation.angular_frequency"
            ),
            direction=_vec3(raw.get("direction", [0.0, 0.0, 1.0]), f"{path}.excitation.direction"),
        )
    return JointSpec(
        name=_string(_require(data, "name", path), f"{path}.name"),
        kind=kind,
        a=_parse_attachment(_require(data, "a", path), f"{path}.a"),
        b=_parse_attachment(_require(data, "b", path), f"{path}.b"),
        components=components,
        excitation=excitation,
    )


def _parse_force(value: Any, path: str) -> ForceSpec:
    data = _mapping(value, path)
    kind = _require(data, "type", path)
    name = _string(_require(data, "name", path), f"{path}.name")
    a = _parse_attachment(_require(data, "a", path), f"{path}.a")
    b = _parse_attachment(_require(data, "b", path), f"{path}.b")
    if kind == "spring":
        return SpringSpec(
            name=name,
            a=a,
            b=b,
            stiffness=_number(_require(data, "stiffness", path), f"{path}.stiffness"),
            natural_length=_optional_number(data, "natural_length", path),
        )
    if kind == "damper":
        return DamperSpec(
            name=name,
            a=a,
            b=b,
            damping=_number(_require(data, "damping", path), f"{path}.damping"),
        )
    _fail(f"unknown force type {kind!r}", f"{path}.type")


def _parse_binding(value: Any, path: str) -> DesignVarBinding:
    data = _mapping(value, path)
    kind = _require(data, "kind", path)
    if kind not in BINDING_KINDS:
        _fail(f"unknown design variable kind {kind!r}", f"{path}.kind")
    prop = data.get("property")
    if kind == "beam_property":
        if prop not in BEAM_BINDING_PROPERTIES:
            _fail(f"unknown beam property {prop!r}", f"{path}.property")
    elif prop is not None:
        _fail("'property' only applies to beam_property bindings", f"{path}.property")
    binding = DesignVarBinding(
        id=_string(_require(data, "id", path), f"{path}.id"),
        kind=kind,
        target=_string(_require(data, "target", path), f"{path}.target"),
        initial=_number(_require(data, "initial", path), f"{path}.initial"),
        lb=_number(data.get("lb", -1e300), f"{path}.lb"),
        ub=_number(data.get("ub", 1e300), f"{path}.ub"),
        parameter=prop,
    )
    if binding.lb > binding.ub:
        _fail(f"bound violation: lb {binding.lb} > ub {binding.ub}", path)
    return binding


def _parse_simulation(value: Any, path: str) -> SimSettings:
    data = _mapping(value, path)
    settings = SimSettings(
        T=_number(_require(data, "T", path), f"{path}.T"),
        h=_number(_require(data, "h", path), f"{path}.h"),
        alpha=_number(data.get("alpha", config.DEFAULT_ALPHA), f"{path}.alpha"),
        newton_tol=_number(data.get("newton_tol", config.NEWTON_TOL), f"{path}.newton_tol"),
        max_newton_iters=_integer(
            data.get("max_newton_iters", config.MAX_NEWTON_ITERS), f"{path}.max_newton_iters"
        ),
        strain_measure=data.get("strain_measure", STRAIN_AVERAGED),
        literal_transverse=bool(data.get("literal_transverse", False)),
    )
    check_simulation(settings, path)
    return settings


def check_simulation(settings: SimSettings, path: str = "simulation") -> None:
    if settings.h <= 0.0:
        _fail("h must be positive", f"{path}.h")
    if settings.T < settings.h:
        _fail("T must be at least h", f"{path}.T")
    if not 0.0 <= settings.alpha <= 1.0:
        _fail("alpha must lie in [0, 1]", f"{path}.alpha")
    if settings.newton_tol <= 0.0:
        _fail("newton_tol must be positive", f"{path}.newton_tol")
    if settings.max_newton_iters < 1:
        _fail("max_newton_iters must be at least 1", f"{path}.max_newton_iters")
    if settings.strain_measure not in STRAIN_MEASURES:
        _fail(f"unknown strain measure {settings.strain_measure!r}", f"{path}.strain_measure")


def _parse_term(value: Any, path: str, allowed: Sequence[str]) -> TermSpec:
    data = _mapping(value, path)
    kind = _require(data, "kind", path)
    if kind not in allowed:
        _fail(f"unknown term kind {kind!r}", f"{path}.kind")
    mode = data.get("mode", "terminal" if "at" in data else "integral")
    if mode not in ("integral", "terminal"):
        _fail(f"unknown mode {mode!r}", f"{path}.mode")
    if kind in CONSTRAINT_TERMS:
        mode = "integral" if kind == "stress_measure" else "terminal"
    elif mode == "integral" and kind not in RUNNING_TERMS:
        _fail(f"{kind} is only available at sampled times", path)
    elif mode == "terminal" and kind not in SAMPLED_TERMS:
        _fail(f"{kind} is only available as a running term", path)
    at = data.get("at")
    if at is not None and not isinstance(at, str):
        at = _number(at, f"{path}.at")
    if isinstance(at, str) and at not in ("final", "initial"):
        _fail("'at' must be 'final', 'initial' or a time", f"{path}.at")

    def _ref(key: str) -> Optional[AttachmentRef]:
        if key not in data:
            return None
        return _parse_attachment(data[key], f"{path}.{key}")

    return TermSpec(
        kind=kind,
        weight=_number(data.get("weight", 1.0), f"{path}.weight"),
        mode=mode,
        at=at if mode == "terminal" and kind not in CONSTRAINT_TERMS else None,
        point=_ref("point"),
        joint=data.get("joint"),
        root=_ref("root"),
        tip=_ref("tip"),
        normal=_vec3(data["normal"], f"{path}.normal") if "normal" in data else None,
        body=data.get("body"),
        limit=_optional_number(data, "limit", path),
        exponent=_optional_number(data, "exponent", path),
        minimum=_optional_number(data, "minimum", path),
    )


def _parse_optimization(value: Any, path: str) -> OptSettings:
    data = _mapping(value, path)
    gradient = data.get("gradient", "adjoint")
    if gradient not in GRADIENT_METHODS:
        _fail(f"unknown gradient method {gradient!r}", f"{path}.gradient")
    constraints = tuple(
        _parse_term(item, f"{path}.constraints[{index}]", CONSTRAINT_TERMS)
        for index, item in enumerate(_list(data.get("constraints", []), f"{path}.constraints"))
    )
    settings = OptSettings(
        max_iters=_integer(data.get("max_iters", config.OPT_MAX_ITERS), f"{path}.max_iters"),
        tolerance=_number(data.get("tolerance", config.OPT_IMPROVEMENT_TOL), f"{path}.tolerance"),
        patience=_integer(data.get("patience", config.OPT_PATIENCE), f"{path}.patience"),
        initial_step=_number(
            data.get("initial_step", config.OPT_INITIAL_STEP), f"{path}.initial_step"
        ),
        gradient=gradient,
        constraints=constraints,
    )
    if settings.max_iters < 0:
        _fail("max_iters must be non-negative", f"{path}.max_iters")
    if settings.initial_step <= 0.0:
        _fail("initial_step must be positive", f"{path}.initial_step")
    return settings


def parse_model(text: str) -> ModelDefinition:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(
            f"invalid JSON: {exc.msg}", location=f"line {exc.lineno} column {exc.colno}"
        ) from exc
    data = _mapping(raw, "$")
    version = data.get("version", config.MODEL_FORMAT_VERSION)
    if version != config.MODEL_FORMAT_VERSION:
        _fail(f"unsupported model format version {version}", "$.version")

    nodes_raw = _mapping(data.get("nodes", {}), "$.nodes")
    nodes = tuple((str(name), _vec3(position, f"$.nodes.{name}")) for name, position in nodes_raw.items())
    bodies = tuple(
        _parse_body(item, f"$.bodies[{index}]")
        for index, item in enumerate(_list(_require(data, "bodies", "$"), "$.bodies"))
    )
    joints = tuple(
        _parse_joint(item, f"$.joints[{index}]")
        for index, item in enumerate(_list(data.get("joints", []), "$.joints"))
    )
    forces = tuple(
        _parse_force(item, f"$.forces[{index}]")
        for index, item in enumerate(_list(data.get("forces", []), "$.forces"))
    )
    bindings = tuple(
        _parse_binding(item, f"$.design_variables[{index}]")
        for index, item in enumerate(_list(data.get("design_variables", []), "$.design_variables"))
    )
    objective_raw = _mapping(data.get("objective", {"terms": []}), "$.objective")
    objective = tuple(
        _parse_term(item, f"$.objective.terms[{index}]", RUNNING_TERMS + SAMPLED_TERMS)
        for index, item in enumerate(_list(objective_raw.get("terms", []), "$.objective.terms"))
    )
    optimization = None
    if data.get("optimization") is not None:
        optimization = _parse_optimization(data["optimization"], "$.optimization")

    model = ModelDefinition(
        name=str(data.get("name", "model")),
        nodes=nodes,
        bodies=bodies,
        joints=joints,
        forces=forces,
        gravity=_vec3(data.get("gravity", [0.0, 0.0, 0.0]), "$.gravity"),
        design_variables=bindings,
        simulation=_parse_simulation(_require(data, "simulation", "$"), "$.simulation"),
        objective=objective,
        optimization=optimization,
        version=version,
    )
    check_references(model)
    return model


def _check_unique(names: Sequence[str], what: str, path: str) -> None:
    seen = set()
    for name in names:
        if name in seen:
            _fail(f"duplicate {what} name {name!r}", path)
        seen.add(name)


def _check_attachment(model: ModelDefinition, ref: AttachmentRef, path: str) -> None:
    nodes = model.node_map()
    if ref.ground:
        if ref.node is not None and ref.node not in nodes:
            _fail(f"unresolved reference to node {ref.node!r}", path)
        return
    try:
        body = model.body(ref.body)
    except KeyError:
        _fail(f"unresolved reference to body {ref.body!r}", path)
    if ref.node is None:
        if isinstance(body, BeamSpec):
            _fail("beam attachments must name a beam node", path)
        return
    if isinstance(body, BeamSpec):
        if ref.node not in body.node_names():
            _fail(f"unresolved reference to node {ref.node!r} of beam {body.name!r}", path)
    elif ref.node not in nodes:
        _fail(f"unresolved reference to node {ref.node!r}", path)


def _check_term(model: ModelDefinition, term: TermSpec, path: str) -> None:
    for key in ("point", "root", "tip"):
        ref = getattr(term, key)
        if ref is not None:
            _check_attachment(model, ref, f"{path}.{key}")
    if term.kind in ("displacement_squared", "velocity_squared") and term.point is None:
        _fail("missing required key 'point'", path)
    if term.kind == "tip_deflection":
        if term.root is None or term.tip is None:
            _fail("tip_deflection needs 'root' and 'tip'", path)
        if term.root.ground or not isinstance(model.body(term.root.body), BeamSpec):
            _fail("tip_deflection root must be a beam node", f"{path}.root")
    if term.kind == "reaction_squared":
        if term.joint not in {joint.name for joint in model.joints}:
            _fail(f"unresolved reference to joint {term.joint!r}", f"{path}.joint")
    if term.kind in CONSTRAINT_TERMS:
        if term.body is None or not any(
            isinstance(body, BeamSpec) and body.name == term.body for body in model.bodies
        ):
            _fail(f"unresolved reference to beam {term.body!r}", f"{path}.body")
        if term.kind == "stress_measure" and (term.limit is None or term.limit <= 0.0):
            _fail("stress_measure needs a positive 'limit'", path)
        if term.kind == "min_length" and term.minimum is None:
            _fail("min_length needs 'minimum'", path)


def check_references(model: ModelDefinition) -> None:
    """Raise ModelError for any cross-reference that does not resolve."""
    nodes = model.node_map()
    _check_unique([name for name, _ in model.nodes], "node", "$.nodes")
    _check_unique([body.name for body in model.bodies], "body", "$.bodies")
    _check_unique([joint.name for joint in model.joints], "joint", "$.joints")
    _check_unique([force.name for force in model.forces], "force", "$.forces")
    _check_unique([binding.id for binding in model.design_variables], "design variable", "$.design_variables")

    for index, body in enumerate(model.bodies):
        path = f"$.bodies[{index}]"
        if isinstance(body, BeamSpec):
            for key in ("start", "end"):
                if getattr(body, key) not in nodes:
                    _fail(f"unresolved reference to node {getattr(body, key)!r}", f"{path}.{key}")
        else:
            if isinstance(body.center_of_mass, str) and body.center_of_mass not in nodes:
                _fail(
                    f"unresolved reference to node {body.center_of_mass!r}",
                    f"{path}.center_of_mass",
                )
        velocity = body.initial_velocity
        if velocity is not None and isinstance(velocity.about, str) and velocity.about not in nodes:
            _fail(f"unresolved reference to node {velocity.about!r}", f"{path}.initial_velocity")

    for index, joint in enumerate(model.joints):
        path = f"$.joints[{index}]"
        _check_attachment(model, joint.a, f"{path}.a")
        _check_attachment(model, joint.b, f"{path}.b")
        if joint.a.ground and joint.b.ground:
            _fail("a joint needs at least one body", path)
        grounded = joint.a.ground or joint.b.ground
        if (joint.components is not None or joint.excitation is not None) and not grounded:
            _fail("components and excitation apply to ground anchors only", path)
        if joint.kind == "welded":
            if joint.a.ground:
                pass
            elif not isinstance(model.body(joint.a.body), RigidBodySpec):
                _fail("welded joints connect a rigid body (or ground) to a beam node", f"{path}.a")
            if joint.b.ground or not isinstance(model.body(joint.b.body), BeamSpec):
                _fail("welded joints connect a rigid body (or ground) to a beam node", f"{path}.b")
            if joint.components is not None:
                _fail("welded joints constrain all components", path)

    for index, force in enumerate(model.forces):
        path = f"$.forces[{index}]"
        _check_attachment(model, force.a, f"{path}.a")
        _check_attachment(model, force.b, f"{path}.b")
        if force.a.ground and force.b.ground:
            _fail("a force element needs at least one body", path)

    targets = set()
    for index, binding in enumerate(model.design_variables):
        path = f"$.design_variables[{index}]"
        key = (binding.kind, binding.target, binding.parameter)
        if key in targets:
            _fail(f"duplicate binding target {binding.target!r}", path)
        targets.add(key)
        if binding.kind in NODE_POSITION_KINDS:
            if binding.target not in nodes:
                _fail(f"unresolved reference to node {binding.target!r}", f"{path}.target")
            continue
        if binding.kind == "beam_property":
            try:
                body = model.body(binding.target)
            except KeyError:
                _fail(f"unresolved reference to beam {binding.target!r}", f"{path}.target")
            if not isinstance(body, BeamSpec):
                _fail(f"{binding.target!r} is not a beam", f"{path}.target")
            if binding.parameter == "width" and body.section.shape != "square":
                _fail("width bindings need a square section", f"{path}.property")
            if binding.parameter in ("area", "second_moment") and body.section.shape != "generic":
                _fail(f"{binding.parameter} bindings need a generic section", f"{path}.property")
            continue
        expected = SpringSpec if binding.kind == "spring_constant" else DamperSpec
        try:
            force = model.force(binding.target)
        except KeyError:
            _fail(f"unresolved reference to force {binding.target!r}", f"{path}.target")
        if not isinstance(force, expected):
            _fail(f"{binding.target!r} is not a {expected.__name__[:-4].lower()}", f"{path}.target")

    for index, term in enumerate(model.objective):
        _check_term(model, term, f"$.objective.terms[{index}]")
    if model.optimization is not None:
        for index, term in enumerate(model.optimization.constraints):
            _check_term(model, term, f"$.optimization.constraints[{index}]")


def serialize_model(model: ModelDefinition) -> str:
    return json.dumps(model.to_dict(), indent=2)


def design_space(model: ModelDefinition) -> DesignSpace:
    bindings = model.design_variables
    return DesignSpace(
        ids=tuple(binding.id for binding in bindings),
        initial=np.array([binding.initial for binding in bindings], dtype=float),
        lower=np.array([binding.lb for binding in bindings], dtype=float),
        upper=np.array([binding.ub for binding in bindings], dtype=float),
    )


def _set_axis(position: Vec3, axis: int, value: float) -> Vec3:
    values = list(position)
    values[axis] = value
    return tuple(values)


def with_design(model: ModelDefinition, a: Sequence[float]) -> ModelDefinition:
    """Return the model with design values substituted into bindings and targets."""
    values = np.asarray(a, dtype=float)
    if values.shape != (len(model.design_variables),):
        raise ModelError(
            f"design vector has {values.size} entries, model declares "
            f"{len(model.design_variables)} design variables"
        )
    nodes = dict(model.nodes)
    bodies = {body.name: body for body in model.bodies}
    forces = {force.name: force for force in model.forces}
    bindings = []
    for binding, value in zip(model.design_variables, values):
        value = float(value)
        bindings.append(replace(binding, initial=value))
        if binding.kind in NODE_POSITION_KINDS:
            nodes[binding.target] = _set_axis(nodes[binding.target], binding.axis, value)
        elif binding.kind == "spring_constant":
            forces[binding.target] = replace(forces[binding.target], stiffness=value)
        elif binding.kind == "damping_coefficient":
            forces[binding.target] = replace(forces[binding.target], damping=value)
        else:
            beam = bodies[binding.target]
            if binding.parameter in ("density", "youngs_modulus"):
                bodies[beam.name] = replace(beam, **{binding.parameter: value})
            else:
                section = replace(beam.section, **{binding.parameter: value})
                bodies[beam.name] = replace(beam, section=section)
    return replace(
        model,
        nodes=tuple((name, nodes[name]) for name, _ in model.nodes),
        bodies=tuple(bodies[body.name] for body in model.bodies),
        forces=tuple(forces[force.name] for force in model.forces),
        design_variables=tuple(bindings),
    )
