from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pytest

from multibody.model import ModelDefinition, parse_model

ROOT_DIR = Path(__file__).resolve().parents[1]
MODELS_DIR = ROOT_DIR / "data" / "models"


def load_shipped(name: str) -> ModelDefinition:
    return parse_model((MODELS_DIR / f"{name}.json").read_text(encoding="utf-8"))


def build_model(data: Dict[str, Any]) -> ModelDefinition:
    return parse_model(json.dumps(data))


def shortened(model: ModelDefinition, T: float, h: Optional[float] = None) -> ModelDefinition:
    changes = {"T": T}
    if h is not None:
        changes["h"] = h
    return replace(model, simulation=replace(model.simulation, **changes))


def central_difference(fn, x: np.ndarray, step: float = 1e-6, deltas: Optional[np.ndarray] = None) -> np.ndarray:
    """Column-wise central differences of a vector (or scalar) function.

    Each column steps by step * (1 + |x_i|) unless explicit deltas are given.
    """
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        delta = step * (1.0 + abs(x[i])) if deltas is None else float(deltas[i])
        shift = np.zeros_like(x)
        shift[i] = delta
        columns.append((np.asarray(fn(x + shift)) - np.asarray(fn(x - shift))) / (2.0 * delta))
    return np.stack(columns, axis=-1)


def free_beam_data(T: float = 0.05, h: float = 1e-3) -> Dict[str, Any]:
    """One unconstrained, undamped beam spinning in its plane."""
    return {
        "version": 1,
        "name": "free_beam",
        "nodes": {"A": [0.0, 0.0, 0.0], "B": [1.0, 0.0, 0.0]},
        "bodies": [
            {
                "name": "rod",
                "type": "beam",
                "start": "A",
                "end": "B",
                "elements": 2,
                "density": 1000.0,
                "youngs_modulus": 1.0e6,
                "section": {"shape": "square", "width": 0.02},
                "initial_velocity": {"linear": [0.0, 0.2, 0.1], "angular": [0.0, 0.0, 1.0], "about": "A"},
            }
        ],
        "design_variables": [
            {"id": "X_B", "kind": "node_position_X", "target": "B", "initial": 1.0, "lb": 0.5, "ub": 2.0},
            {"id": "E", "kind": "beam_property", "target": "rod", "property": "youngs_modulus", "initial": 1.0e6, "lb": 1.0e5, "ub": 1.0e7},
        ],
        "simulation": {"T": T, "h": h},
        "objective": {
            "terms": [
                {"kind": "displacement_squared", "mode": "integral", "point": {"body": "rod", "node": "B"}}
            ]
        },
    }


def oscillator_data(T: float = 1.0, h: float = 0.01) -> Dict[str, Any]:
    """A rigid mass on a spring to ground moving along the spring axis only."""
    return {
        "version": 1,
        "name": "oscillator",
        "nodes": {"O": [1.0, 0.0, 0.0], "G": [0.0, 0.0, 0.0]},
        "bodies": [
            {
                "name": "mass",
                "type": "rigid",
                "mass": 1.0,
                "inertia": [1.0, 1.0, 1.0],
                "center_of_mass": "O",
                "initial_velocity": {"linear": [0.3, 0.0, 0.0]},
            }
        ],
        "forces": [
            {
                "name": "spring",
                "type": "spring",
                "a": {"body": "mass", "node": "O"},
                "b": {"ground": "G"},
                "stiffness": 100.0,
                "natural_length": 0.8,
            }
        ],
        "simulation": {"T": T, "h": h},
    }


def welded_frame_data(T: float = 0.02, h: float = 1e-3) -> Dict[str, Any]:
    """A hub welded to an arm, a post welded to ground and partial ground anchors."""
    return {
        "version": 1,
        "name": "welded_frame",
        "nodes": {
            "H": [0.0, 0.0, 0.0],
            "R": [0.2, 0.0, 0.0],
            "T": [0.8, 0.0, 0.0],
            "K": [0.0, 0.5, 0.0],
            "F": [0.8, 0.5, 0.0],
        },
        "bodies": [
            {
                "name": "hub",
                "type": "rigid",
                "mass": 2.0,
                "inertia": [0.02, 0.03, 0.04],
                "center_of_mass": "H",
                "initial_velocity": {"angular": [0.0, 0.0, 0.5]},
            },
            {
                "name": "arm",
                "type": "beam",
                "start": "R",
                "end": "T",
                "elements": 2,
                "density": 2700.0,
                "youngs_modulus": 7.0e8,
                "section": {"shape": "circular_tube", "outer_radius": 0.01, "inner_radius": 0.008},
                "initial_velocity": {"angular": [0.0, 0.0, 0.5], "about": "H"},
            },
            {
                "name": "post",
                "type": "beam",
                "start": "K",
                "end": "F",
                "elements": 1,
                "density": 2700.0,
                "youngs_modulus": 7.0e8,
                "section": {"shape": "generic", "area": 1.0e-4, "second_moment": 1.0e-9},
            },
        ],
        "joints": [
            {"name": "axle", "type": "spherical", "a": {"body": "hub", "node": "H"}, "b": {"ground": "H"}},
            {
                "name": "tilt",
                "type": "spherical",
                "a": {"body": "hub", "local": [0.0, 0.0, 0.1]},
                "b": {"ground": [0.0, 0.0, 0.1]},
                "components": [0, 1],
            },
            {"name": "weld", "type": "welded", "a": {"body": "hub", "node": "R"}, "b": {"body": "arm", "node": "R"}},
            {"name": "root", "type": "welded", "a": {"ground": "K"}, "b": {"body": "post", "node": "K"}},
            {
                "name": "shaker",
                "type": "spherical",
                "a": {"body": "post", "node": "F"},
                "b": {"ground": "F"},
                "components": [2],
            },
        ],
        "forces": [
            {"name": "spring", "type": "spring", "a": {"body": "arm", "node": "T"}, "b": {"body": "post", "node": "F"}, "stiffness": 50.0},
            {"name": "damper", "type": "damper", "a": {"body": "arm", "node": "T"}, "b": {"body": "post", "node": "F"}, "damping": 2.0},
        ],
        "gravity": [0.0, -9.81, 0.0],
        "design_variables": [
            {"id": "X_R", "kind": "node_position_X", "target": "R", "initial": 0.2, "lb": 0.1, "ub": 0.3},
            {"id": "Y_F", "kind": "node_position_Y", "target": "F", "initial": 0.5, "lb": 0.3, "ub": 0.7},
            {"id": "k", "kind": "spring_constant", "target": "spring", "initial": 50.0, "lb": 1.0, "ub": 500.0},
            {"id": "c", "kind": "damping_coefficient", "target": "damper", "initial": 2.0, "lb": 0.0, "ub": 20.0},
            {"id": "A_post", "kind": "beam_property", "target": "post", "property": "area", "initial": 1.0e-4, "lb": 1.0e-5, "ub": 1.0e-3},
            {"id": "rho_arm", "kind": "beam_property", "target": "arm", "property": "density", "initial": 2700.0, "lb": 1000.0, "ub": 8000.0},
        ],
        "simulation": {"T": T, "h": h},
        "objective": {
            "terms": [
                {"kind": "displacement_squared", "mode": "integral", "point": {"body": "arm", "node": "T"}},
                {"kind": "velocity_squared", "mode": "terminal", "at": "final", "point": {"body": "hub", "local": [0.1, 0.0, 0.0]}},
                {"kind": "reaction_squared", "joint": "weld", "weight": 1.0e-4},
            ]
        },
    }


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def isolated_env(tmp_path, monkeypatch):
    """Keep CLI log files and dotenv lookups inside the test's temp directory."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("MBS_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("MBS_LOG_LEVEL", "WARNING")
    monkeypatch.delenv("MBS_FD_WORKERS", raising=False)
    return tmp_path
