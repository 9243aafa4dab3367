# tests/conftest.py
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from core.config import load_config
from core.kinematics import load_chain
from core.synth import SceneObject, Scene, rack_fixtures, upright_pose

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def chain():
    return load_chain()


@pytest.fixture(scope="session")
def close_cfg():
    """Run config with the bundled close-contact override (2 cm threshold, small oracle noise)."""
    return load_config(ROOT / "data" / "close_contact.yaml", environ={})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def single_box_scene():
    """One 5 cm cube at (0.5, 0) and the rack at (0.45, 0.4)."""
    box = SceneObject(0, "box", upright_pose(0.5, 0.0, 0.03), (0.025, 0.025, 0.03))
    return Scene((box,), (0.5, 0.0), 0.3, tuple(rack_fixtures((0.45, 0.4))), seed=0)
