# core/kinematics.py
"""Serial revolute chains: description loading, forward kinematics, Jacobians."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from core.errors import InputError
from core.se3 import Pose, exp_so3

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_CHAIN = Path(__file__).resolve().parent.parent / "data" / "tabletop7.json"

# A joint configuration is a plain float vector of length chain.n.
JointConfig = np.ndarray


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    origin: Pose          # fixed transform from the previous joint frame
    axis: np.ndarray      # unit axis in the joint frame
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class SphereGroup:
    """Collision spheres rigidly attached to joint frame ``joint`` (or to the TCP)."""

    name: str
    joint: int
    centers: np.ndarray   # (m, 3) in the attachment frame
    radii: np.ndarray     # (m,)
    frame: str = "joint"  # "joint" | "tcp"
    hand: bool = False

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(c) == 0 or len(c) != len(r):
            raise InputError(f"sphere group {self.name!r}: centers/radii mismatch")
        if np.any(r <= 0):
            raise InputError(f"sphere group {self.name!r}: radii must be positive")
        if self.frame not in ("joint", "tcp"):
            raise InputError(f"sphere group {self.name!r}: unknown frame {self.frame!r}")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)


@dataclass(frozen=True, eq=False)
class KinematicChain:
    name: str
    joints: tuple[Joint, ...]
    tcp: Pose
    base: Pose = field(default_factory=Pose.identity)
    links: tuple[SphereGroup, ...] = ()
    home: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.joints) < 1:
            raise InputError("chain needs at least one joint")
        for j in self.joints:
            if not j.lower < j.upper:
                raise InputError(f"joint {j.name}: lower limit must be below upper")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise InputError(f"joint {j.name}: axis is not unit length")
        for g in self.links:
            if not 0 <= g.joint < len(self.joints):
                raise InputError(f"link {g.name}: joint index {g.joint} out of range")
        home = np.zeros(len(self.joints)) if self.home is None else np.asarray(self.home, dtype=float)
        if home.shape != (len(self.joints),):
            raise InputError("home configuration length does not match joint count")
        object.__setattr__(self, "home", home)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def hand_links(self) -> frozenset[int]:
        return frozenset(i for i, g in enumerate(self.links) if g.hand)

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_min, self.q_max)

    def within_limits(self, q: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))

    def with_attachment(self, group: SphereGroup) -> "KinematicChain":
        """Copy of the chain with one more sphere group (appended last)."""
        return replace(self, links=self.links + (group,))

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise InputError(f"joint config has shape {q.shape}, chain {self.name} needs ({self.n},)")
        return q


@dataclass(frozen=True, eq=False)
class ChainState:
    """Every frame of the chain at one configuration."""

    q: np.ndarray
    rotations: np.ndarray   # (n, 3, 3) joint frames after joint rotation
    origins: np.ndarray     # (n, 3) joint frame origins
    axes: np.ndarray        # (n, 3) world joint axes
    tcp: Pose

    def frame(self, joint: int) -> Pose:
        return Pose(self.rotations[joint], self.origins[joint])


# ---------- Loading ----------

def _pose_entry(entry: dict) -> Pose:
    return Pose.from_xyz_rpy(entry.get("xyz", (0, 0, 0)), entry.get("rpy", (0, 0, 0)))


def chain_from_dict(doc: dict) -> KinematicChain:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise InputError(f"chain format_version {version!r} unsupported (expected {FORMAT_VERSION})")
    try:
        joints = tuple(
            Joint(
                name=j["name"],
                origin=_pose_entry(j),
                axis=np.asarray(j["axis"], dtype=float),
                lower=float(j["lower"]),
                upper=float(j["upper"]),
            )
            for j in doc["joints"]
        )
        links = tuple(
            SphereGroup(
                name=g["name"],
                joint=int(g["joint"]),
                centers=[s["center"] for s in g["spheres"]],
                radii=[s["radius"] for s in g["spheres"]],
                frame=g.get("frame", "joint"),
                hand=bool(g.get("hand", False)),
            )
            for g in doc.get("links", [])
        )
        return KinematicChain(
            name=doc.get("name", "chain"),
            joints=joints,
            tcp=_pose_entry(doc["tcp"]),
            base=_pose_entry(doc.get("base", {})),
            links=links,
            home=doc.get("home"),
        )
    except KeyError as e:
        raise InputError(f"chain description missing field {e}") from e


def load_chain(path: str | Path | None = None) -> KinematicChain:
    path = Path(path) if path else DEFAULT_CHAIN
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read chain description {path}: {e}") from e
    chain = chain_from_dict(doc)
    log.debug("loaded chain %s with %d joints, %d sphere groups", chain.name, chain.n, len(chain.links))
    return chain


# ---------- Forward kinematics ----------

def chain_state(chain: KinematicChain, q) -> ChainState:
    q = chain.check_config(q)
    n = chain.n
    rotations = np.empty((n, 3, 3))
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    R = chain.base.rotation
    p = chain.base.translation
    for i, joint in enumerate(chain.joints):
        p = R @ joint.origin.translation + p
        R = R @ joint.origin.rotation
        axes[i] = R @ joint.axis
        R = R @ exp_so3(joint.axis * q[i])
        rotations[i] = R
        origins[i] = p
    tcp = Pose(R @ chain.tcp.rotation, R @ chain.tcp.translation + p)
    return ChainState(q=q.copy(), rotations=rotations, origins=origins, axes=axes, tcp=tcp)


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    return chain_state(chain, q).tcp


def point_jacobian(state: ChainState, joint: int, point: np.ndarray) -> np.ndarray:
    """3xn Jacobian of a point rigidly attached to frame ``joint``."""
    n = len(state.axes)
    J = np.zeros((3, n))
    k = joint + 1
    J[:, :k] = np.cross(state.axes[:k], np.asarray(point, dtype=float) - state.origins[:k]).T
    return J


def spatial_jacobian(chain: KinematicChain, q, state: ChainState | None = None) -> np.ndarray:
    """
    6xn Jacobian of the TCP twist: rows 0-2 world angular velocity, rows 3-5
    world linear velocity of the TCP origin.
    """
    state = state or chain_state(chain, q)
    J = np.empty((6, chain.n))
    J[:3] = state.axes.T
    J[3:] = point_jacobian(state, chain.n - 1, state.tcp.translation)
    return J


def group_frame(state: ChainState, group: SphereGroup) -> Pose:
    return state.tcp if group.frame == "tcp" else state.frame(group.joint)


def sphere_centers(chain: KinematicChain, state: ChainState) -> list[np.ndarray]:
    """World centres of every sphere group, in chain.links order."""
    return [group_frame(state, g).apply(g.centers) for g in chain.links]


def random_config(chain: KinematicChain, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(chain.q_min, chain.q_max)


def single_joint_chain(
    tcp_xyz: Sequence[float] = (1.0, 0.0, 0.0),
    axis: Sequence[float] = (0.0, 0.0, 1.0),
    lower: float = -np.pi,
    upper: float = np.pi,
    links: tuple[SphereGroup, ...] = (),
) -> KinematicChain:
    """Planar one-joint arm, handy for analytic checks."""
    return KinematicChain(
        name="single",
        joints=(Joint("joint1", Pose.identity(), np.asarray(axis, dtype=float), lower, upper),),
        tcp=Pose.from_translation(tcp_xyz),
        links=links,
    )
