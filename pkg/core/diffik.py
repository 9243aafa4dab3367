# core/diffik.py
"""
Diff-IK quadratic programs.

Pick-only problem (one config q):

    min ||xi - J q_dot||^2
    s.t. q_min - q <= q_dot dt <= q_max - q,   cJ q_dot <= 0

Coupled pick-place problem, decision vector (fixed order, n joints each):

    [q_alpha, q_beta, a_q_alpha, e_q_alpha, a_q_beta, e_q_beta] velocities, xi_beta (6)

with six equality rows tying the hand-object relative velocity at the place
pose to the (static) one at the pick pose, joint boxes and contact rows for
every config, an optional horizontal-region box on xi_beta, and soft costs
pulling the approach/entry configs toward their offsets from the grasp pose.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from core.collision import CollisionBody, contact_jacobian, query_proximal_contacts
from core.errors import InputError
from core.kinematics import ChainState, KinematicChain, chain_state, spatial_jacobian
from core.qp import ActiveSetSolver, QpProblem, QpSolution, QpStatus
from core.se3 import Pose, Twist, hat, log_pose_error, pose_distance

log = logging.getLogger(__name__)

CONFIG_NAMES = ("q_alpha", "q_beta", "a_q_alpha", "e_q_alpha", "a_q_beta", "e_q_beta")
APPROACH_OFFSET = 0.10
ENTRY_OFFSET = 0.20
APPROACH_WEIGHT = 10.0
STABILIZATION_GAIN = 0.5
MAX_PLACE_ANGULAR = 1.0
MAX_PLACE_LINEAR = 0.5


# ---------- Waypoint offsets ----------

def approach_pose(grasp: Pose, offset: float = APPROACH_OFFSET) -> Pose:
    """Backed off along the hand approach (z) axis, same rotation."""
    return Pose(grasp.rotation, grasp.translation - offset * grasp.rotation[:, 2])


def entry_pose(approach: Pose, offset: float = ENTRY_OFFSET) -> Pose:
    """Straight above the approach pose, same rotation."""
    return Pose(approach.rotation, approach.translation + np.array([0.0, 0.0, offset]))


def lift_pose(grasp: Pose, entry: Pose) -> Pose:
    """Grasp pose raised vertically to the entry height."""
    p = grasp.translation.copy()
    p[2] = entry.translation[2]
    return Pose(grasp.rotation, p)


# ---------- Placement targets ----------

@dataclass(frozen=True, eq=False)
class PlacementTarget:
    """
    Object placement goal: one pose, a discrete set, or an upright family with
    free yaw and optionally free horizontal position inside ``region``
    (``[[x_lo, x_hi], [y_lo, y_hi]]``). ``weights`` is the diagonal of the
    placement weight matrix, angular components first.
    """

    poses: tuple[Pose, ...]
    free_yaw: bool = False
    region: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    support: Optional[str] = None   # name of the body the object rests on

    def __post_init__(self):
        if not self.poses:
            raise InputError("placement target needs at least one pose")
        region = None if self.region is None else np.asarray(self.region, dtype=float).reshape(2, 2)
        if self.weights is None:
            w = np.ones(6)
            if self.free_yaw:
                w[2] = 0.0
            if region is not None:
                w[3:5] = 0.0
        else:
            w = np.asarray(self.weights, dtype=float).reshape(6)
        if np.any(w < 0):
            raise InputError("placement weights must be non-negative")
        if self.free_yaw != (w[2] == 0.0):
            raise InputError("free yaw requires (and is implied by) a zero yaw weight")
        if (region is not None) != (w[3] == 0.0 and w[4] == 0.0):
            raise InputError("a horizontal region requires zero x/y weights, and vice versa")
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "weights", w)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.weights)

    @classmethod
    def upright(cls, base: Pose, region=None, support: Optional[str] = None) -> "PlacementTarget":
        return cls((base,), free_yaw=True, region=region, support=support)


def yaw_aligned(current: Pose, base: Pose) -> Pose:
    """Member of ``{Rz(psi) base}`` closest in rotation to ``current``."""
    M = base.rotation @ current.rotation.T
    psi = np.arctan2(M[0, 1] - M[1, 0], M[0, 0] + M[1, 1])
    c, s = np.cos(psi), np.sin(psi)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(Rz @ base.rotation, base.translation)


def _goal_for(current: Pose, pose: Pose, target: PlacementTarget) -> Pose:
    goal = yaw_aligned(current, pose) if target.free_yaw else pose
    if target.region is not None:
        p = goal.translation.copy()
        p[:2] = np.clip(current.translation[:2], target.region[:, 0], target.region[:, 1])
        goal = Pose(goal.rotation, p)
    return goal


def placement_error(current: Pose, target: PlacementTarget) -> np.ndarray:
    """Projected 6-vector error to the closest admissible goal (free directions zeroed)."""
    best = None
    for pose in target.poses:
        e = log_pose_error(current, _goal_for(current, pose, target)).vector
        if target.free_yaw:
            e[2] = 0.0
        if target.region is not None:
            e[3:5] = 0.0
        if best is None or np.linalg.norm(e) < np.linalg.norm(best):
            best = e
    return best


def place_target_twist(current: Pose, target: PlacementTarget, k: int, dt: float) -> Twist:
    """Twist closing the placement error over the ``k`` remaining steps, magnitude-clipped."""
    if k < 1:
        raise InputError("remaining steps must be at least 1")
    e = placement_error(current, target) / (k * dt)
    w, v = e[:3], e[3:]
    nw, nv = np.linalg.norm(w), np.linalg.norm(v)
    if nw > MAX_PLACE_ANGULAR:
        w = w * (MAX_PLACE_ANGULAR / nw)
    if nv > MAX_PLACE_LINEAR:
        v = v * (MAX_PLACE_LINEAR / nv)
    return Twist(w, v)


# ---------- Config stack ----------

@dataclass(frozen=True, eq=False)
class ConfigStack:
    q_alpha: np.ndarray
    q_beta: np.ndarray
    a_q_alpha: np.ndarray
    e_q_alpha: np.ndarray
    a_q_beta: np.ndarray
    e_q_beta: np.ndarray

    @classmethod
    def from_pair(cls, q_alpha, q_beta) -> "ConfigStack":
        qa = np.asarray(q_alpha, dtype=float)
        qb = np.asarray(q_beta, dtype=float)
        return cls(qa.copy(), qb.copy(), qa.copy(), qa.copy(), qb.copy(), qb.copy())

    def get(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def items(self):
        return [(name, getattr(self, name)) for name in CONFIG_NAMES]

    def vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n) for n in CONFIG_NAMES])

    def advanced(self, velocities: dict[str, np.ndarray], dt: float, chain: KinematicChain) -> "ConfigStack":
        return ConfigStack(
            **{name: chain.clip(q + dt * velocities.get(name, 0.0)) for name, q in self.items()}
        )


@dataclass(frozen=True, eq=False)
class StepContext:
    """Per-step geometry: which chain and environment each config is checked against."""

    chain: KinematicChain
    env_alpha: tuple[CollisionBody, ...] = ()
    env_beta: tuple[CollisionBody, ...] = ()
    held_chain: Optional[KinematicChain] = None
    threshold: float = 0.05
    dt: float = 1.0
    approach_weight: float = APPROACH_WEIGHT
    stabilization: bool = True
    coupling: bool = True

    def chain_for(self, name: str) -> KinematicChain:
        if name.endswith("beta") and self.held_chain is not None:
            return self.held_chain
        return self.chain

    def env_for(self, name: str) -> tuple[CollisionBody, ...]:
        return tuple(self.env_alpha) if name.endswith("alpha") else tuple(self.env_beta)


@dataclass(frozen=True, eq=False)
class _ConfigTerms:
    state: ChainState
    J: np.ndarray
    contact_rows: np.ndarray
    n_contacts: int


def _terms(ctx: StepContext, name: str, q: np.ndarray) -> _ConfigTerms:
    chain = ctx.chain_for(name)
    state = chain_state(chain, q)
    J = spatial_jacobian(chain, q, state)
    env = ctx.env_for(name)
    if env:
        contacts = query_proximal_contacts(chain, q, env, ctx.threshold, state)
        rows = contact_jacobian(chain, q, contacts, state)
    else:
        rows = np.zeros((0, chain.n))
    return _ConfigTerms(state, J, rows, len(rows))


# ---------- QP builders ----------

def _box_rows(chain: KinematicChain, q: np.ndarray, dt: float):
    n = chain.n
    C = np.vstack([dt * np.eye(n), -dt * np.eye(n)])
    d = np.concatenate([chain.q_max - q, q - chain.q_min])
    return C, d


def build_pick_qp(
    chain: KinematicChain,
    q,
    xi: Twist,
    contact_rows: Optional[np.ndarray],
    dt: float,
    J: Optional[np.ndarray] = None,
) -> QpProblem:
    """Pick-only Diff-IK problem over q_dot."""
    if dt <= 0:
        raise InputError("dt must be positive")
    q = chain.check_config(q)
    J = spatial_jacobian(chain, q) if J is None else J
    H = 2.0 * J.T @ J
    g = -2.0 * J.T @ xi.vector
    C, d = _box_rows(chain, q, dt)
    if contact_rows is not None and len(contact_rows):
        C = np.vstack([C, contact_rows])
        d = np.concatenate([d, np.zeros(len(contact_rows))])
    return QpProblem(H, g, C=C, d=d)


@dataclass(frozen=True)
class QpLayout:
    n: int
    n_box: int          # box rows (2n per config, all configs)
    n_region: int

    def block(self, name: str) -> slice:
        i = CONFIG_NAMES.index(name)
        return slice(i * self.n, (i + 1) * self.n)

    @property
    def xi(self) -> slice:
        return slice(6 * self.n, 6 * self.n + 6)

    @property
    def size(self) -> int:
        return 6 * self.n + 6


def coupling_rows(
    J_alpha: np.ndarray,
    J_beta: np.ndarray,
    oT_alpha: Pose,
    oT_beta: Pose,
    hT_beta: Pose,
    layout: QpLayout,
) -> np.ndarray:
    """
    6 x N rows: hand velocity relative to the object, expressed in the object
    frame, is the same at the pick (object static) and at the place (object
    moving with xi_beta).
    """
    Ra, Rb = oT_alpha.rotation, oT_beta.rotation
    r = hT_beta.translation - oT_beta.translation
    rows = np.zeros((6, layout.size))
    a, b, xi = layout.block("q_alpha"), layout.block("q_beta"), layout.xi
    rows[:3, a] = Ra.T @ J_alpha[:3]
    rows[:3, b] = -Rb.T @ J_beta[:3]
    rows[:3, xi.start:xi.start + 3] = Rb.T
    rows[3:, a] = Ra.T @ J_alpha[3:]
    rows[3:, b] = -Rb.T @ J_beta[3:]
    rows[3:, xi.start:xi.start + 3] = -Rb.T @ hat(r)
    rows[3:, xi.start + 3:xi.stop] = Rb.T
    return rows


def consistency_error(oT_alpha: Pose, hT_alpha: Pose, hT_beta: Pose, oT_beta: Pose) -> Twist:
    """
    Twist carrying ``oT_beta`` onto the pose implied by the pick-side hand-object
    transform. The denoising loop rebuilds ``oT_beta`` from the hand poses every
    step, so there this is zero and the stabilization bias stays inert; it acts
    only when the caller tracks the object pose on its own.
    """
    implied = hT_beta @ hT_alpha.inverse() @ oT_alpha
    return log_pose_error(oT_beta, implied)


def build_pickplace_qp(
    ctx: StepContext,
    stack: ConfigStack,
    xi_alpha: Twist,
    place_twist: Twist,
    target: PlacementTarget,
    oT_alpha: Pose,
    oT_beta: Pose,
    terms: Optional[dict[str, _ConfigTerms]] = None,
) -> tuple[QpProblem, QpLayout]:
    chain, dt = ctx.chain, ctx.dt
    if dt <= 0:
        raise InputError("dt must be positive")
    n = chain.n
    terms = terms or {name: _terms(ctx, name, q) for name, q in stack.items()}
    layout = QpLayout(n=n, n_box=12 * n, n_region=4 if target.region is not None else 0)
    N = layout.size
    H = np.zeros((N, N))
    g = np.zeros(N)

    # grasp tracking
    a = layout.block("q_alpha")
    Ja = terms["q_alpha"].J
    H[a, a] += 2.0 * Ja.T @ Ja
    g[a] += -2.0 * Ja.T @ xi_alpha.vector

    # placement
    Q = target.Q
    xs = layout.xi
    H[xs, xs] += 2.0 * Q
    g[xs] += -2.0 * Q @ place_twist.vector

    # approach / entry configs chase their offsets from the current grasp poses
    w = ctx.approach_weight
    for side in ("alpha", "beta"):
        goals = {
            f"a_q_{side}": approach_pose(terms[f"q_{side}"].state.tcp),
            f"e_q_{side}": entry_pose(terms[f"a_q_{side}"].state.tcp),
        }
        for name, goal in goals.items():
            t = terms[name]
            err = log_pose_error(t.state.tcp, goal).vector / dt
            blk = layout.block(name)
            H[blk, blk] += 2.0 * w * t.J.T @ t.J
            g[blk] += -2.0 * w * t.J.T @ err

    # coupling
    A = b = None
    if ctx.coupling:
        hT_alpha = terms["q_alpha"].state.tcp
        hT_beta = terms["q_beta"].state.tcp
        A = coupling_rows(Ja, terms["q_beta"].J, oT_alpha, oT_beta, hT_beta, layout)
        b = np.zeros(6)
        if ctx.stabilization:
            e = consistency_error(oT_alpha, hT_alpha, hT_beta, oT_beta)
            gamma = STABILIZATION_GAIN / dt
            Rb = oT_beta.rotation
            r = hT_beta.translation - oT_beta.translation
            b[:3] = Rb.T @ (gamma * e.angular)
            b[3:] = Rb.T @ (gamma * (e.linear - hat(r) @ e.angular))

    # inequalities: boxes, region, contacts
    C_blocks, d_blocks = [], []
    for name, q in stack.items():
        Cb, db = _box_rows(chain, q, dt)
        row = np.zeros((len(Cb), N))
        row[:, layout.block(name)] = Cb
        C_blocks.append(row)
        d_blocks.append(db)
    if target.region is not None:
        p = oT_beta.translation
        row = np.zeros((4, N))
        for k, axis in enumerate((0, 1)):
            col = xs.start + 3 + axis
            row[2 * k, col] = dt
            row[2 * k + 1, col] = -dt
        C_blocks.append(row)
        lo, hi = target.region[:, 0], target.region[:, 1]
        d_blocks.append(np.array([hi[0] - p[0], p[0] - lo[0], hi[1] - p[1], p[1] - lo[1]]))
    for name in CONFIG_NAMES:
        rows = terms[name].contact_rows
        if len(rows):
            row = np.zeros((len(rows), N))
            row[:, layout.block(name)] = rows
            C_blocks.append(row)
            d_blocks.append(np.zeros(len(rows)))
    C = np.vstack(C_blocks)
    d = np.concatenate(d_blocks)
    return QpProblem(H, g, A=A, b=b, C=C, d=d), layout


# ---------- Step ----------

@dataclass(frozen=True, eq=False)
class DiffIkStep:
    velocities: dict[str, np.ndarray]
    xi_beta: Optional[Twist]
    status: QpStatus
    iterations: int
    n_contacts: int = 0
    active_contacts: int = 0
    active_limits: int = 0
    coupling_residual: float = 0.0
    max_approach_rate: float = 0.0
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == QpStatus.OPTIMAL

    def record(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "contacts": self.n_contacts,
            "active_contacts": self.active_contacts,
            "active_limits": self.active_limits,
            "coupling_residual": self.coupling_residual,
            "max_approach_rate": self.max_approach_rate,
        }


class DiffIkSolver:
    """Builds and solves one Diff-IK problem per call, warm-starting from the last solution."""

    def __init__(self, qp: Optional[ActiveSetSolver] = None):
        self.qp = qp or ActiveSetSolver()
        self._warm: Optional[QpSolution] = None
        self._warm_key: Optional[tuple] = None

    def reset(self) -> None:
        self._warm = None
        self._warm_key = None

    def _solve(self, problem: QpProblem, key: tuple) -> QpSolution:
        warm = self._warm if self._warm_key == key else None
        sol = self.qp.solve(problem, warm)
        if sol.ok:
            self._warm, self._warm_key = sol, key
        return sol

    def step(
        self,
        ctx: StepContext,
        stack: ConfigStack,
        xi_alpha: Twist,
        target: Optional[PlacementTarget] = None,
        place_twist: Optional[Twist] = None,
        oT_alpha: Optional[Pose] = None,
        oT_beta: Optional[Pose] = None,
    ) -> DiffIkStep:
        chain, dt, n = ctx.chain, ctx.dt, ctx.chain.n
        zeros = {name: np.zeros(n) for name in CONFIG_NAMES}
        if target is None:
            t = _terms(ctx, "q_alpha", stack.q_alpha)
            problem = build_pick_qp(chain, stack.q_alpha, xi_alpha, t.contact_rows, dt, J=t.J)
            sol = self._solve(problem, ("pick", problem.n_ineq))
            if not sol.ok:
                return DiffIkStep(zeros, None, sol.status, sol.iterations, n_contacts=t.n_contacts)
            qd = _clip_velocity(chain, stack.q_alpha, sol.x, dt)
            velocities = dict(zeros, q_alpha=qd)
            return DiffIkStep(
                velocities,
                None,
                sol.status,
                sol.iterations,
                n_contacts=t.n_contacts,
                active_contacts=sum(1 for i in sol.active if i >= 2 * n),
                active_limits=sum(1 for i in sol.active if i < 2 * n),
                max_approach_rate=_max_rate(t.contact_rows, qd),
            )

        if oT_alpha is None or oT_beta is None or place_twist is None:
            raise InputError("coupled step needs object poses and a place twist")
        terms = {name: _terms(ctx, name, q) for name, q in stack.items()}
        problem, layout = build_pickplace_qp(ctx, stack, xi_alpha, place_twist, target, oT_alpha, oT_beta, terms)
        sol = self._solve(problem, ("pickplace", problem.n_ineq))
        n_contacts = sum(t.n_contacts for t in terms.values())
        if not sol.ok:
            return DiffIkStep(zeros, None, sol.status, sol.iterations, n_contacts=n_contacts)

        velocities = {
            name: _clip_velocity(chain, q, sol.x[layout.block(name)], dt) for name, q in stack.items()
        }
        rate = max(
            (_max_rate(terms[name].contact_rows, velocities[name]) for name in CONFIG_NAMES),
            default=0.0,
        )
        first_contact = layout.n_box + layout.n_region
        residual = (
            float(np.max(np.abs(problem.A @ sol.x - problem.b))) if problem.n_eq else 0.0
        )
        return DiffIkStep(
            velocities,
            Twist.from_vector(sol.x[layout.xi]),
            sol.status,
            sol.iterations,
            n_contacts=n_contacts,
            active_contacts=sum(1 for i in sol.active if i >= first_contact),
            active_limits=sum(1 for i in sol.active if i < layout.n_box),
            coupling_residual=residual,
            max_approach_rate=rate,
        )


def _clip_velocity(chain: KinematicChain, q: np.ndarray, qd: np.ndarray, dt: float) -> np.ndarray:
    return np.clip(qd, (chain.q_min - q) / dt, (chain.q_max - q) / dt)


def _max_rate(rows: np.ndarray, qd: np.ndarray) -> float:
    return float(np.max(rows @ qd)) if len(rows) else 0.0


# ---------- Settle IK ----------

@dataclass(frozen=True, eq=False)
class TrackResult:
    q: np.ndarray
    ok: bool
    position_error: float
    rotation_error: float
    iterations: int
    max_approach_rate: float = 0.0
    reason: str = ""


def track_pose(
    chain: KinematicChain,
    q0,
    target: Pose,
    env: Sequence[CollisionBody] = (),
    threshold: float = 0.05,
    max_iterations: int = 60,
    tolerance: tuple[float, float] = (1e-4, 1e-3),
    max_step: tuple[float, float] = (0.5, 0.2),
    solver: Optional[ActiveSetSolver] = None,
) -> TrackResult:
    """
    Iterate pick-only Diff-IK (dt = 1) until the TCP reaches ``target``.
    Each iteration asks for at most ``max_step`` (rad, m) of correction.
    """
    solver = solver or ActiveSetSolver()
    q = chain.check_config(q0).copy()
    ctx = StepContext(chain, env_alpha=tuple(env), threshold=threshold)
    worst_rate = 0.0
    pos_err = rot_err = float("inf")
    for it in range(max_iterations + 1):
        state = chain_state(chain, q)
        pos_err, rot_err = pose_distance(state.tcp, target)
        if pos_err <= tolerance[0] and rot_err <= tolerance[1]:
            return TrackResult(q, True, pos_err, rot_err, it, worst_rate)
        if it == max_iterations:
            break
        e = log_pose_error(state.tcp, target)
        w, v = e.angular, e.linear
        nw, nv = np.linalg.norm(w), np.linalg.norm(v)
        scale = min(1.0, max_step[0] / nw if nw > 0 else 1.0, max_step[1] / nv if nv > 0 else 1.0)
        t = _terms(ctx, "q_alpha", q)
        problem = build_pick_qp(chain, q, e.scaled(scale), t.contact_rows, 1.0, J=t.J)
        sol = solver.solve(problem)
        if not sol.ok:
            return TrackResult(q, False, pos_err, rot_err, it, worst_rate, f"qp {sol.status.value}")
        qd = _clip_velocity(chain, q, sol.x, 1.0)
        worst_rate = max(worst_rate, _max_rate(t.contact_rows, qd))
        if np.max(np.abs(qd)) < 1e-12:
            break
        q = chain.clip(q + qd)
    return TrackResult(q, False, pos_err, rot_err, max_iterations, worst_rate, "did not converge")
