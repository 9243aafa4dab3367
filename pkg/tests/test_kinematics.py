# tests/test_kinematics.py
import json

import numpy as np
import pytest

from core.errors import InputError
from core.kinematics import (
    DEFAULT_CHAIN,
    SphereGroup,
    chain_from_dict,
    chain_state,
    forward_kinematics,
    random_config,
    single_joint_chain,
    spatial_jacobian,
    sphere_centers,
)
from core.se3 import log_so3


def test_single_joint_forward_kinematics():
    c = single_joint_chain()
    p = forward_kinematics(c, [np.pi / 2])
    np.testing.assert_allclose(p.translation, [0.0, 1.0, 0.0], atol=1e-12)
    J = spatial_jacobian(c, [0.0])
    np.testing.assert_allclose(J[:, 0], [0, 0, 1, 0, 1, 0], atol=1e-12)


def test_jacobian_matches_finite_differences(chain):
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        q = random_config(chain, rng)
        J = spatial_jacobian(chain, q)
        num = np.empty_like(J)
        for i in range(chain.n):
            dq = np.zeros(chain.n)
            dq[i] = h
            a, b = forward_kinematics(chain, q + dq), forward_kinematics(chain, q - dq)
            num[:3, i] = log_so3(a.rotation @ b.rotation.T)[0] / (2 * h)
            num[3:, i] = (a.translation - b.translation) / (2 * h)
        scale = max(1.0, float(np.abs(J).max()))
        np.testing.assert_allclose(J, num, atol=1e-6 * scale)


def test_home_is_within_limits_and_hand_points_down(chain):
    assert chain.within_limits(chain.home)
    tcp = forward_kinematics(chain, chain.home)
    assert tcp.rotation[2, 2] < -0.99
    assert 0.3 < tcp.translation[0] < 0.4


def test_hand_group_follows_tcp(chain):
    state = chain_state(chain, chain.home)
    hand = [i for i, g in enumerate(chain.links) if g.hand]
    assert len(hand) == 1
    centers = sphere_centers(chain, state)[hand[0]]
    np.testing.assert_allclose(centers, state.tcp.apply(chain.links[hand[0]].centers), atol=1e-12)


def test_format_version_checked():
    doc = json.loads(DEFAULT_CHAIN.read_text())
    doc["format_version"] = 2
    with pytest.raises(InputError):
        chain_from_dict(doc)


def test_missing_field_is_input_error():
    doc = json.loads(DEFAULT_CHAIN.read_text())
    del doc["tcp"]
    with pytest.raises(InputError):
        chain_from_dict(doc)


@pytest.mark.parametrize("radius", [0.0, -0.01])
def test_sphere_radii_must_be_positive(radius):
    with pytest.raises(InputError, match="positive"):
        SphereGroup("tip", 0, [[0.0, 0.0, 0.0]], [radius])


def test_config_shape_checked(chain):
    with pytest.raises(InputError):
        forward_kinematics(chain, np.zeros(3))


def test_clip_and_limits(chain):
    q = chain.q_max + 0.1
    assert not chain.within_limits(q)
    assert chain.within_limits(chain.clip(q))
