from __future__ import annotations

import copy
import json
from dataclasses import replace

import numpy as np
import pytest

from multibody.errors import ModelError
from multibody.model import (
    BeamSpec,
    DesignVarBinding,
    RigidBodySpec,
    check_simulation,
    design_space,
    parse_model,
    serialize_model,
    with_design,
)

from conftest import MODELS_DIR, build_model, free_beam_data, load_shipped, welded_frame_data

SHIPPED = sorted(path.stem for path in MODELS_DIR.glob("*.json"))


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_models_parse(name):
    model = load_shipped(name)
    assert model.bodies
    assert model.simulation.h > 0.0


@pytest.mark.parametrize("name", SHIPPED)
def test_serialize_then_parse_preserves_model(name):
    model = load_shipped(name)
    again = parse_model(serialize_model(model))
    assert again.to_dict() == model.to_dict()


def test_beam_interior_nodes_are_named_after_the_beam():
    model = load_shipped("pendulum")
    beam = model.body("beam")
    assert isinstance(beam, BeamSpec)
    assert beam.node_names() == ["A", "beam#1", "beam#2", "beam#3", "beam#4", "Tip"]


def test_invalid_json_reports_line_and_column():
    with pytest.raises(ModelError) as info:
        parse_model('{\n  "version": 1,\n  "bodies": [,]\n}')
    assert info.value.location == "line 3 column 14"


def test_missing_key_reports_path():
    data = free_beam_data()
    del data["bodies"][0]["density"]
    with pytest.raises(ModelError) as info:
        build_model(data)
    assert "density" in str(info.value)
    assert info.value.location == "$.bodies[0]"


def test_unsupported_version_rejected():
    data = free_beam_data()
    data["version"] = 2
    with pytest.raises(ModelError, match="version"):
        build_model(data)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["bodies"][0].update(start="nowhere"), "nowhere"),
        (lambda d: d["design_variables"][0].update(target="nowhere"), "nowhere"),
        (lambda d: d["objective"]["terms"][0]["point"].update(node="nowhere"), "nowhere"),
        (lambda d: d["design_variables"][0].update(lb=3.0), "bound violation"),
        (lambda d: d["design_variables"].append(dict(d["design_variables"][0], id="other")), "duplicate"),
        (lambda d: d["bodies"].append(copy.deepcopy(d["bodies"][0])), "duplicate body"),
        (lambda d: d["bodies"][0]["section"].update(shape="hexagon"), "hexagon"),
        (lambda d: d["simulation"].update(h=-1.0), "h must be positive"),
        (lambda d: d["simulation"].update(T=1e-5), "T must be at least h"),
        (lambda d: d["simulation"].update(alpha=1.5), "alpha"),
        (lambda d: d["design_variables"][1].update(property="color"), "color"),
    ],
)
def test_model_errors(mutate, message):
    data = free_beam_data()
    mutate(data)
    with pytest.raises(ModelError, match=message):
        build_model(data)


def test_welded_joint_needs_a_beam_node():
    data = welded_frame_data()
    data["joints"][2]["b"] = {"body": "hub", "node": "R"}
    with pytest.raises(ModelError, match="welded"):
        build_model(data)


def test_anchor_options_only_on_ground_joints():
    data = welded_frame_data()
    data["joints"][2]["components"] = [0]
    with pytest.raises(ModelError, match="ground anchors"):
        build_model(data)


def test_tip_deflection_root_must_be_beam():
    data = welded_frame_data()
    data["objective"]["terms"] = [
        {"kind": "tip_deflection", "at": "final", "root": {"body": "hub", "node": "H"}, "tip": {"body": "arm", "node": "T"}}
    ]
    with pytest.raises(ModelError, match="root"):
        build_model(data)


def test_running_only_term_rejected_at_sample_time():
    data = welded_frame_data()
    data["objective"]["terms"] = [{"kind": "reaction_squared", "joint": "weld", "at": 0.01}]
    with pytest.raises(ModelError, match="running term"):
        build_model(data)


def test_width_binding_needs_square_section():
    data = welded_frame_data()
    data["design_variables"].append(
        {"id": "w", "kind": "beam_property", "target": "arm", "property": "width", "initial": 0.01}
    )
    with pytest.raises(ModelError, match="square"):
        build_model(data)


def test_open_bounds_default_to_huge_box():
    data = free_beam_data()
    for binding in data["design_variables"]:
        binding.pop("lb")
        binding.pop("ub")
    space = design_space(build_model(data))
    assert np.all(space.lower <= -1e299)
    assert np.all(space.upper >= 1e299)


def test_design_space_follows_declaration_order():
    space = design_space(load_shipped("quarter_car"))
    assert space.ids[:3] == ("X1", "Y1", "Z1")
    assert space.ids[-3:] == ("Z17", "k1", "c1")
    assert space.size == 15
    np.testing.assert_allclose(space.clip(space.upper + 1.0), space.upper)


def test_binding_axis_and_beam_parameter():
    binding = DesignVarBinding(id="y", kind="node_position_Y", target="B", initial=0.0, lb=-1.0, ub=1.0)
    assert binding.axis == 1
    assert binding.parameter is None
    assert "property" not in binding.to_dict()

    model = build_model(free_beam_data())
    stiffness = model.design_variables[1]
    assert model.design_variables[0].axis == 0
    assert stiffness.parameter == "youngs_modulus"
    assert stiffness.to_dict()["property"] == "youngs_modulus"


def test_with_design_substitutes_every_binding_kind():
    model = load_shipped("quarter_car")
    space = design_space(model)
    values = space.initial.copy()
    values[space.ids.index("Y1")] = 0.25
    values[space.ids.index("k1")] = 2.0e4
    values[space.ids.index("c1")] = 80.0
    changed = with_design(model, values)
    assert changed.node_map()["P1"][1] == pytest.approx(0.25)
    assert changed.force("spring").stiffness == pytest.approx(2.0e4)
    assert changed.force("damper").damping == pytest.approx(80.0)
    assert design_space(changed).initial[space.ids.index("Y1")] == pytest.approx(0.25)


def test_with_design_updates_beam_properties():
    model = load_shipped("pendulum")
    changed = with_design(model, [0.08, 5000.0, 2.0e7])
    beam = changed.body("beam")
    assert beam.section.width == pytest.approx(0.08)
    assert beam.density == pytest.approx(5000.0)
    assert beam.youngs_modulus == pytest.approx(2.0e7)


def test_with_design_rejects_wrong_length():
    with pytest.raises(ModelError):
        with_design(load_shipped("pendulum"), [1.0])


def test_rigid_body_frame_defaults_to_identity():
    body = load_shipped("rigid_spring_beam").body("bar")
    assert isinstance(body, RigidBodySpec)
    assert body.frame == ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def test_check_simulation_rejects_bad_override():
    model = load_shipped("pendulum")
    with pytest.raises(ModelError) as info:
        check_simulation(replace(model.simulation, h=0.0), "--overrides")
    assert info.value.location == "--overrides.h"


def test_optimization_section_parsed():
    settings = load_shipped("rigid_spring_beam").optimization
    assert settings.max_iters == 60
    assert settings.tolerance == pytest.approx(1e-6)
    assert settings.patience == 5
    assert [term.kind for term in settings.constraints] == ["min_length"]


def test_model_file_is_plain_json():
    data = json.loads((MODELS_DIR / "front_axle.json").read_text(encoding="utf-8"))
    assert len(data["design_variables"]) == 30
