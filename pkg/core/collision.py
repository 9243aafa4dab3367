# core/collision.py
"""
Distance queries between the robot's sphere groups and environment bodies,
and the contact Jacobian used as ``cJ q_dot <= 0`` rows in the Diff-IK QP.

Normals point from the environment toward the robot. Signed distance is
negative on penetration.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from core.errors import InputError
from core.kinematics import (
    ChainState,
    KinematicChain,
    SphereGroup,
    chain_state,
    point_jacobian,
    sphere_centers,
)
from core.se3 import Pose

BODY_KINDS = ("sphere", "capsule", "box", "point-cloud")
_FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class CollisionBody:
    """
    World-fixed environment body.

    ``sphere`` uses pose.translation and radius; ``capsule`` is the segment
    +-half_length along the local z axis swept by radius; ``box`` uses
    half_extents in the local frame; ``point-cloud`` holds world points.
    Robot sphere groups listed in ``exclude_links`` ignore this body.
    """

    name: str
    kind: str
    pose: Pose = field(default_factory=Pose.identity)
    radius: float = 0.0
    half_length: float = 0.0
    half_extents: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    exclude_links: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.kind not in BODY_KINDS:
            raise InputError(f"body {self.name!r}: unknown kind {self.kind!r}")
        if self.kind in ("sphere", "capsule") and self.radius <= 0:
            raise InputError(f"body {self.name!r}: radius must be positive")
        if self.kind == "capsule" and self.half_length <= 0:
            raise InputError(f"body {self.name!r}: capsule half_length must be positive")
        if self.kind == "box":
            h = np.asarray(self.half_extents, dtype=float).reshape(3)
            if np.any(h <= 0):
                raise InputError(f"body {self.name!r}: box extents must be positive")
            object.__setattr__(self, "half_extents", h)
        if self.kind == "point-cloud":
            pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
            if len(pts) == 0:
                raise InputError(f"body {self.name!r}: empty point cloud")
            object.__setattr__(self, "points", pts)
        object.__setattr__(self, "exclude_links", frozenset(self.exclude_links))

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def excluding(self, links: Iterable[int]) -> "CollisionBody":
        return replace(self, exclude_links=self.exclude_links | frozenset(links))


def sphere_body(name: str, center, radius: float) -> CollisionBody:
    return CollisionBody(name, "sphere", Pose.from_translation(center), radius=radius)


def capsule_body(name: str, a, b, radius: float) -> CollisionBody:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    axis = b - a
    length = float(np.linalg.norm(axis))
    if length <= 0:
        raise InputError(f"capsule {name!r}: endpoints coincide")
    z = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    R = np.column_stack([x, np.cross(z, x), z])
    return CollisionBody(name, "capsule", Pose(R, (a + b) / 2), radius=radius, half_length=length / 2)


def box_body(name: str, pose: Pose, half_extents) -> CollisionBody:
    return CollisionBody(name, "box", pose, half_extents=np.asarray(half_extents, dtype=float))


def cloud_body(name: str, points) -> CollisionBody:
    return CollisionBody(name, "point-cloud", points=np.asarray(points, dtype=float))


def table_body(size: float = 4.0, thickness: float = 0.1, height: float = 0.0) -> CollisionBody:
    """Large slab whose top face is the plane z = height."""
    return box_body(
        "table",
        Pose.from_translation((0.0, 0.0, height - thickness / 2)),
        (size / 2, size / 2, thickness / 2),
    )


# ---------- Primitive distances ----------
# Each takes sphere centres (m, 3) and radii (m,) and returns
# (signed distance (m,), environment witness points (m, 3), normals (m, 3)).

def _normalize_rows(d: np.ndarray, norms: np.ndarray) -> np.ndarray:
    out = np.tile(_FALLBACK_NORMAL, (len(d), 1))
    ok = norms > 1e-12
    out[ok] = d[ok] / norms[ok, None]
    return out


def _to_point(c, r, s, R):
    diff = c - s
    dist = np.linalg.norm(diff, axis=1)
    n = _normalize_rows(diff, dist)
    return dist - R - r, s + R * n, n


def _sphere(body: CollisionBody, c, r):
    s = np.broadcast_to(body.pose.translation, c.shape)
    return _to_point(c, r, s, body.radius)


def _capsule(body: CollisionBody, c, r):
    axis = body.pose.rotation[:, 2]
    a = body.pose.translation - body.half_length * axis
    t = np.clip((c - a) @ axis, 0.0, 2 * body.half_length)
    s = a + t[:, None] * axis
    return _to_point(c, r, s, body.radius)


def _box(body: CollisionBody, c, r):
    R, p, h = body.pose.rotation, body.pose.translation, body.half_extents
    local = (c - p) @ R
    clamped = np.clip(local, -h, h)
    diff = local - clamped
    out_dist = np.linalg.norm(diff, axis=1)
    inside = out_dist <= 1e-12

    d = np.empty(len(c))
    n_local = _normalize_rows(diff, out_dist)
    w_local = clamped.copy()
    d[~inside] = out_dist[~inside]
    if np.any(inside):
        # penetration: push out through the nearest face
        li = local[inside]
        gaps = h - np.abs(li)
        axis = np.argmin(gaps, axis=1)
        rows = np.arange(len(li))
        sign = np.where(li[rows, axis] >= 0, 1.0, -1.0)
        nl = np.zeros_like(li)
        nl[rows, axis] = sign
        wl = li.copy()
        wl[rows, axis] = sign * h[axis]
        d[inside] = -gaps[rows, axis]
        n_local[inside] = nl
        w_local[inside] = wl
    return d - r, w_local @ R.T + p, n_local @ R.T


def _cloud(body: CollisionBody, c, r):
    dist, idx = body.tree.query(c)
    s = body.points[idx]
    n = _normalize_rows(c - s, dist)
    return dist - r, s, n


_DISPATCH = {"sphere": _sphere, "capsule": _capsule, "box": _box, "point-cloud": _cloud}


def sphere_distances(body: CollisionBody, centers: np.ndarray, radii: np.ndarray):
    c = np.asarray(centers, dtype=float).reshape(-1, 3)
    r = np.asarray(radii, dtype=float).reshape(-1)
    return _DISPATCH[body.kind](body, c, r)


def signed_distance(body: CollisionBody, points: np.ndarray) -> np.ndarray:
    """Signed distance from points (radius-0 spheres) to the body surface."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return sphere_distances(body, pts, np.zeros(len(pts)))[0]


# ---------- Robot queries ----------

@dataclass(frozen=True, eq=False)
class Contact:
    link: int
    body: str
    sphere: int
    robot_point: np.ndarray
    env_point: np.ndarray
    normal: np.ndarray
    distance: float


@dataclass(frozen=True)
class ContactSet:
    contacts: tuple[Contact, ...] = ()

    def __len__(self) -> int:
        return len(self.contacts)

    def __iter__(self) -> Iterator[Contact]:
        return iter(self.contacts)

    @property
    def distances(self) -> np.ndarray:
        return np.array([c.distance for c in self.contacts])


def _pairs(chain: KinematicChain, state: ChainState, environment: Sequence[CollisionBody]):
    centers = sphere_centers(chain, state)
    for li, group in enumerate(chain.links):
        for body in environment:
            if li in body.exclude_links:
                continue
            d, w, n = sphere_distances(body, centers[li], group.radii)
            j = int(np.argmin(d))
            yield li, group, body, j, centers[li][j], d[j], w[j], n[j]


def query_proximal_contacts(
    chain: KinematicChain,
    q,
    environment: Sequence[CollisionBody],
    threshold: float,
    state: ChainState | None = None,
) -> ContactSet:
    """One contact (closest sphere) per (link group, body) pair closer than ``threshold``."""
    if threshold <= 0:
        raise InputError("proximity threshold must be positive")
    state = state or chain_state(chain, q)
    found = []
    for li, group, body, j, center, d, w, n in _pairs(chain, state, environment):
        if d < threshold:
            found.append(
                Contact(
                    link=li,
                    body=body.name,
                    sphere=j,
                    robot_point=center - group.radii[j] * n,
                    env_point=w,
                    normal=n,
                    distance=float(d),
                )
            )
    return ContactSet(tuple(found))


def _attachment_joint(chain: KinematicChain, group: SphereGroup) -> int:
    return chain.n - 1 if group.frame == "tcp" else group.joint


def contact_jacobian(
    chain: KinematicChain, q, contacts: ContactSet, state: ChainState | None = None
) -> np.ndarray:
    """m x n rows mapping q_dot to the approach rate (-d distance/dt) of each contact."""
    state = state or chain_state(chain, q)
    rows = np.zeros((len(contacts), chain.n))
    for k, c in enumerate(contacts):
        joint = _attachment_joint(chain, chain.links[c.link])
        rows[k] = -c.normal @ point_jacobian(state, joint, c.robot_point)
    return rows


def min_clearance(
    chain: KinematicChain,
    q,
    environment: Sequence[CollisionBody],
    state: ChainState | None = None,
) -> float:
    if not environment or not chain.links:
        return float("inf")
    state = state or chain_state(chain, q)
    best = float("inf")
    for *_, d, _w, _n in _pairs(chain, state, environment):
        best = min(best, float(d))
    return best


def attach_cloud(
    chain: KinematicChain,
    points_in_tcp: np.ndarray,
    radius: float = 0.002,
    max_points: int = 64,
    name: str = "held",
) -> KinematicChain:
    """Rigidly attach a point cloud (TCP frame) to the hand as an extra sphere group."""
    pts = np.asarray(points_in_tcp, dtype=float).reshape(-1, 3)
    if len(pts) > max_points:
        idx = np.linspace(0, len(pts) - 1, max_points).round().astype(int)
        pts = pts[idx]
    group = SphereGroup(name, chain.n - 1, pts, np.full(len(pts), radius), frame="tcp")
    return chain.with_attachment(group)
