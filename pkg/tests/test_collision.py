# tests/test_collision.py
import numpy as np
import pytest

from core.collision import (
    CollisionBody,
    attach_cloud,
    box_body,
    capsule_body,
    cloud_body,
    contact_jacobian,
    min_clearance,
    query_proximal_contacts,
    signed_distance,
    sphere_body,
    table_body,
)
from core.errors import InputError
from core.kinematics import SphereGroup, chain_state, forward_kinematics, single_joint_chain, sphere_centers
from core.se3 import Pose


@pytest.mark.parametrize(
    "body, point, expected",
    [
        (sphere_body("s", (0, 0, 0), 0.5), (1.0, 0, 0), 0.5),
        (sphere_body("s", (0, 0, 0), 0.5), (0.2, 0, 0), -0.3),
        (capsule_body("c", (0, 0, -1), (0, 0, 1), 0.1), (0.5, 0, 0.3), 0.4),
        (capsule_body("c", (0, 0, -1), (0, 0, 1), 0.1), (0, 0, 1.5), 0.4),
        (box_body("b", Pose.identity(), (0.5, 0.5, 0.5)), (1.0, 0, 0), 0.5),
        (box_body("b", Pose.identity(), (0.5, 0.5, 0.5)), (0.4, 0, 0), -0.1),
        (box_body("b", Pose.identity(), (0.5, 0.5, 0.5)), (1.5, 1.5, 0), np.sqrt(2)),
        (table_body(), (0.3, 0.1, 0.25), 0.25),
    ],
)
def test_signed_distance_primitives(body, point, expected):
    assert signed_distance(body, np.array([point]))[0] == pytest.approx(expected, abs=1e-12)


def test_cloud_distance_is_exact_nearest(rng):
    pts = rng.uniform(-1, 1, (500, 3))
    body = cloud_body("cloud", pts)
    q = rng.uniform(-1, 1, (20, 3))
    brute = np.min(np.linalg.norm(q[:, None] - pts[None], axis=2), axis=1)
    np.testing.assert_allclose(signed_distance(body, q), brute, atol=1e-12)


def test_bad_bodies_rejected():
    with pytest.raises(InputError):
        CollisionBody("x", "cone")
    with pytest.raises(InputError):
        sphere_body("s", (0, 0, 0), 0.0)
    with pytest.raises(InputError):
        cloud_body("c", np.zeros((0, 3)))


def arm_with_tip_sphere():
    tip = SphereGroup("tip", 0, [[1.0, 0.0, 0.0]], [0.05])
    return single_joint_chain(links=(tip,))


def test_contacts_within_threshold_only():
    chain = arm_with_tip_sphere()
    near = sphere_body("near", (1.0, 0.1, 0.0), 0.02)
    far = sphere_body("far", (-1.0, 0.0, 0.0), 0.02)
    contacts = query_proximal_contacts(chain, [0.0], [near, far], threshold=0.05)
    assert [c.body for c in contacts] == ["near"]
    assert contacts.distances[0] == pytest.approx(0.03)


def test_contact_jacobian_gives_approach_rate():
    chain = arm_with_tip_sphere()
    obstacle = sphere_body("o", (1.0, 0.2, 0.0), 0.05)
    contacts = query_proximal_contacts(chain, [0.0], [obstacle], threshold=0.2)
    rows = contact_jacobian(chain, [0.0], contacts)
    # rotating toward +y moves the tip straight at the obstacle
    assert rows[0, 0] == pytest.approx(1.0, abs=1e-12)
    h = 1e-6
    d0 = query_proximal_contacts(chain, [0.0], [obstacle], 0.2).distances[0]
    d1 = query_proximal_contacts(chain, [h], [obstacle], 0.2).distances[0]
    assert -(d1 - d0) / h == pytest.approx(rows[0, 0], rel=1e-4)


def test_exclusion_hides_a_body_from_a_link():
    chain = arm_with_tip_sphere()
    blocker = sphere_body("blk", (1.0, 0.0, 0.0), 0.1)
    assert min_clearance(chain, [0.0], [blocker]) < 0
    assert min_clearance(chain, [0.0], [blocker.excluding([0])]) == float("inf")


def test_threshold_must_be_positive():
    with pytest.raises(InputError):
        query_proximal_contacts(arm_with_tip_sphere(), [0.0], [], threshold=0.0)


def test_attached_cloud_moves_with_tcp(chain):
    pts = np.array([[0.0, 0.0, 0.05], [0.01, 0.0, 0.05]])
    held = attach_cloud(chain, pts, radius=0.002)
    assert len(held.links) == len(chain.links) + 1
    state = chain_state(held, held.home)
    tcp = forward_kinematics(chain, chain.home)
    np.testing.assert_allclose(sphere_centers(held, state)[-1], tcp.apply(pts), atol=1e-12)
    assert held.links[-1].frame == "tcp"


def test_attach_cloud_subsamples(chain):
    held = attach_cloud(chain, np.zeros((500, 3)), max_points=64)
    assert len(held.links[-1].centers) == 64
