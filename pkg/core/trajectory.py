# core/trajectory.py
"""
Dense joint trajectories from a denoised candidate.

Pick side: entry -> approach -> grasp by Cartesian interpolation tracked with
Diff-IK, a zero-motion close, then a vertical lift. Place side mirrors it in
reverse: the lift above the placement is tracked down from the place config
and replayed backwards, then the hand opens and retracts through the
approach and entry poses. A lazy PRM joins the two lift configs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from core.collision import CollisionBody, min_clearance
from core.config import PrmCfg, TrajectoryCfg
from core.diffik import APPROACH_OFFSET, ENTRY_OFFSET, approach_pose, entry_pose, lift_pose, track_pose
from core.errors import InputError
from core.kinematics import KinematicChain, forward_kinematics
from core.prm import prm_connect
from core.se3 import Pose, interpolate_pose, pose_distance
from core.workcell import Workcell

log = logging.getLogger(__name__)

START_TOLERANCE = 1e-3
OFFSET_TOLERANCE = 1e-9
UPWARD_APPROACH = 0.5     # hand z . world z above this cannot place an upright object


class Phase(str, Enum):
    ENTRY = "entry"
    APPROACH = "approach"
    GRASP_CLOSE = "grasp-close"
    LIFT = "lift"
    TRANSIT = "transit"
    PRE_PLACE = "pre-place"
    PLACE = "place"
    RETRACT = "retract"


PHASE_ORDER = tuple(Phase)
_PLACE_SIDE = {Phase.PRE_PLACE, Phase.PLACE}


# ---------- Waypoints ----------

@dataclass(frozen=True, eq=False)
class Waypoints:
    entry: Pose
    approach: Pose
    grasp: Pose
    lift: Pose

    @classmethod
    def around(cls, grasp: Pose, approach_offset: float = APPROACH_OFFSET, entry_offset: float = ENTRY_OFFSET) -> "Waypoints":
        if approach_offset <= 0 or entry_offset <= 0:
            raise InputError("waypoint offsets must be positive")
        approach = approach_pose(grasp, approach_offset)
        entry = entry_pose(approach, entry_offset)
        return cls(entry, approach, grasp, lift_pose(grasp, entry))


@dataclass(frozen=True, eq=False)
class WaypointSchedule:
    pick: Waypoints
    place: Waypoints
    resolution: tuple[float, float] = (0.005, 0.02)     # [m], [rad] per sample

    @classmethod
    def build(
        cls,
        hT_alpha: Pose,
        hT_beta: Pose,
        resolution: tuple[float, float] = (0.005, 0.02),
        approach_offset: float = APPROACH_OFFSET,
        entry_offset: float = ENTRY_OFFSET,
    ) -> "WaypointSchedule":
        if min(resolution) <= 0:
            raise InputError("interpolation resolution must be positive")
        return cls(
            Waypoints.around(hT_alpha, approach_offset, entry_offset),
            Waypoints.around(hT_beta, approach_offset, entry_offset),
            tuple(resolution),
        )


def dense_poses(waypoints: Sequence[Pose], resolution: tuple[float, float]) -> list[Pose]:
    """Waypoints joined by linear/geodesic interpolation, first waypoint included."""
    if not waypoints:
        raise InputError("need at least one waypoint")
    out = [waypoints[0]]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        dm, drad = pose_distance(a, b)
        n = max(1, int(np.ceil(max(dm / resolution[0], drad / resolution[1]) - 1e-12)))
        out.extend(interpolate_pose(a, b, i / n) for i in range(1, n + 1))
    return out


# ---------- Trajectories ----------

@dataclass(frozen=True, eq=False)
class JointTrajectory:
    configs: np.ndarray            # (m, n)
    phases: tuple[Phase, ...]
    poses: tuple[Pose, ...] = ()
    chain_name: str = ""
    resolution: tuple[float, float] = (0.005, 0.02)

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.configs, dtype=float))
        if len(q) != len(self.phases):
            raise InputError("one phase label per sample")
        if self.poses and len(self.poses) != len(q):
            raise InputError("one hand pose per sample")
        object.__setattr__(self, "configs", q)
        object.__setattr__(self, "phases", tuple(Phase(p) for p in self.phases))
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.phases)

    def phase_table(self) -> list[tuple[Phase, int, int]]:
        """Contiguous (phase, first, last) runs."""
        table: list[tuple[Phase, int, int]] = []
        for i, p in enumerate(self.phases):
            if table and table[-1][0] == p:
                table[-1] = (p, table[-1][1], i)
            else:
                table.append((p, i, i))
        return table

    def segment(self, phase: Phase) -> np.ndarray:
        mask = np.array([p == phase for p in self.phases])
        return self.configs[mask]

    @classmethod
    def from_parts(
        cls,
        chain: KinematicChain,
        parts: Sequence[tuple[Phase, Sequence[np.ndarray]]],
        resolution: tuple[float, float],
    ) -> "JointTrajectory":
        configs, phases = [], []
        for phase, qs in parts:
            configs.extend(qs)
            phases.extend([phase] * len(qs))
        poses = tuple(forward_kinematics(chain, q) for q in configs)
        return cls(np.array(configs), tuple(phases), poses, chain.name, resolution)


@dataclass(frozen=True, eq=False)
class SegmentResult:
    configs: list[np.ndarray]
    poses: list[Pose]
    ok: bool
    failed_index: Optional[int] = None
    reason: str = ""
    max_approach_rate: float = 0.0


def interpolate_track(
    chain: KinematicChain,
    q_start,
    waypoints: Sequence[Pose],
    resolution: tuple[float, float] = (0.005, 0.02),
    environment: Sequence[CollisionBody] = (),
    threshold: float = 0.05,
    cfg: TrajectoryCfg = TrajectoryCfg(),
) -> SegmentResult:
    """
    Track the interpolated waypoint path sample by sample with pick-only
    Diff-IK (joint limits and contact rows active). Stops at the first sample
    that misses the tracking tolerance, jumps more than the joint step bound
    or ends in collision.
    """
    q = chain.check_config(q_start).copy()
    start = forward_kinematics(chain, q)
    dm, drad = pose_distance(start, waypoints[0])
    if dm > START_TOLERANCE or drad > START_TOLERANCE:
        raise InputError(f"segment start is {dm:.2e} m / {drad:.2e} rad off the first waypoint")
    env = tuple(environment)
    configs, reached = [q], [start]

    def failed(i: int, reason: str, rate: float) -> SegmentResult:
        return SegmentResult(configs, reached, False, i, reason, rate)

    if env and min_clearance(chain, q, env) < 0:
        return failed(0, "start config in collision", 0.0)
    worst = 0.0
    poses = dense_poses(waypoints, resolution)
    last = len(poses) - 1
    for i, pose in enumerate(poses[1:], start=1):
        # last sample meets the segment-start tolerance
        if i == last:
            tol, iters = (START_TOLERANCE / 10, START_TOLERANCE), 4 * cfg.track_iterations
        else:
            tol, iters = cfg.tracking_tolerance, cfg.track_iterations
        res = track_pose(chain, q, pose, env, threshold, max_iterations=iters, tolerance=tol)
        worst = max(worst, res.max_approach_rate)
        if not res.ok:
            return failed(i, f"tracking error {res.position_error:.2e} m / {res.rotation_error:.2e} rad", worst)
        step = float(np.max(np.abs(res.q - q)))
        if step > cfg.max_joint_step + 1e-12:
            return failed(i, f"joint step {step:.3f} rad over bound", worst)
        if env and min_clearance(chain, res.q, env) < 0:
            return failed(i, "collision", worst)
        q = res.q
        configs.append(q)
        reached.append(forward_kinematics(chain, q))
    return SegmentResult(configs, reached, True, max_approach_rate=worst)


def settle(
    chain: KinematicChain,
    q_seed,
    pose: Pose,
    environment: Sequence[CollisionBody] = (),
    threshold: float = 0.05,
) -> Optional[np.ndarray]:
    """Config reaching ``pose`` from ``q_seed`` within 1e-4 m / 1e-3 rad, or None."""
    res = track_pose(chain, q_seed, pose, environment, threshold)
    return res.q if res.ok else None


# ---------- Phase geometry ----------

def phase_geometry(
    phase: Phase,
    workcell: Workcell,
    in_hand: Pose,
    place_in_hand: Optional[Pose] = None,
) -> tuple[KinematicChain, tuple[CollisionBody, ...]]:
    """Chain (with the held object when carrying) and environment checked during ``phase``."""
    if phase in (Phase.ENTRY, Phase.APPROACH):
        return workcell.chain, workcell.env_pick
    if phase == Phase.RETRACT:
        return workcell.chain, workcell.env_transit
    X = place_in_hand if (phase in _PLACE_SIDE and place_in_hand is not None) else in_hand
    held = workcell.held_chain(X)
    if phase in (Phase.GRASP_CLOSE, Phase.LIFT):
        return held, workcell.env_lift
    if phase == Phase.TRANSIT:
        return held, workcell.env_transit
    return held, workcell.env_place


# ---------- Assembly ----------

@dataclass(frozen=True, eq=False)
class PickPlaceSolution:
    ok: bool
    trajectory: Optional[JointTrajectory]
    schedule: WaypointSchedule
    in_hand: Pose                            # object pose in the TCP frame
    place_in_hand: Optional[Pose] = None     # set by replan_place
    failed_phase: Optional[Phase] = None
    reason: str = ""
    replan_failed: bool = False
    logs: list[str] = field(default_factory=list)

    @property
    def object_at_place(self) -> Pose:
        """Planned final object pose."""
        return self.schedule.place.grasp @ (self.place_in_hand or self.in_hand)


def _segment_reason(seg: SegmentResult) -> str:
    return f"sample {seg.failed_index}: {seg.reason}"


@dataclass(frozen=True, eq=False)
class SidePlan:
    """Labelled samples for one side (pick or place) of a trajectory."""

    ok: bool
    parts: list[tuple[Phase, list[np.ndarray]]] = field(default_factory=list)
    failed_phase: Optional[Phase] = None
    reason: str = ""

    @property
    def lift_config(self) -> np.ndarray:
        """Config at the lift pose (last pick sample, first place sample)."""
        lift = dict(self.parts).get(Phase.LIFT)
        return lift[-1] if lift is not None else dict(self.parts)[Phase.PRE_PLACE][0]


def _side_failure(phase: Phase, reason: str) -> SidePlan:
    log.debug("segment rejected at %s: %s", phase.value, reason)
    return SidePlan(False, failed_phase=phase, reason=reason)


def plan_pick(
    workcell: Workcell,
    waypoints: Waypoints,
    q_seed,
    in_hand: Pose,
    resolution: tuple[float, float],
    cfg: TrajectoryCfg = TrajectoryCfg(),
    threshold: float = 0.05,
) -> SidePlan:
    """entry -> approach -> grasp, close, lift; the entry pose is settled from ``q_seed``."""
    c, env = phase_geometry(Phase.ENTRY, workcell, in_hand)
    q_entry = settle(c, q_seed, waypoints.entry, env, threshold)
    if q_entry is None:
        return _side_failure(Phase.ENTRY, "cannot settle on the entry pose")
    entry = interpolate_track(c, q_entry, [waypoints.entry, waypoints.approach], resolution, env, threshold, cfg)
    if not entry.ok:
        return _side_failure(Phase.ENTRY, _segment_reason(entry))
    approach = interpolate_track(c, entry.configs[-1], [waypoints.approach, waypoints.grasp], resolution, env, threshold, cfg)
    if not approach.ok:
        return _side_failure(Phase.APPROACH, _segment_reason(approach))
    q_grasp = approach.configs[-1]
    c, env = phase_geometry(Phase.GRASP_CLOSE, workcell, in_hand)
    if min_clearance(c, q_grasp, env) < 0:
        return _side_failure(Phase.GRASP_CLOSE, "held object in collision at the grasp")
    c, env = phase_geometry(Phase.LIFT, workcell, in_hand)
    lift = interpolate_track(c, q_grasp, [waypoints.grasp, waypoints.lift], resolution, env, threshold, cfg)
    if not lift.ok:
        return _side_failure(Phase.LIFT, _segment_reason(lift))
    return SidePlan(
        True,
        [
            (Phase.ENTRY, entry.configs),
            (Phase.APPROACH, approach.configs),
            (Phase.GRASP_CLOSE, [q_grasp]),
            (Phase.LIFT, lift.configs),
        ],
    )


def plan_place(
    workcell: Workcell,
    waypoints: Waypoints,
    q_seed,
    in_hand: Pose,
    resolution: tuple[float, float],
    cfg: TrajectoryCfg = TrajectoryCfg(),
    threshold: float = 0.05,
) -> SidePlan:
    """
    Pre-place descent, open, retract. The descent is tracked upward from the
    place pose (settled from ``q_seed``) and replayed in reverse.
    """
    c, env = phase_geometry(Phase.PRE_PLACE, workcell, in_hand)
    q_place = settle(c, q_seed, waypoints.grasp, env, threshold)
    if q_place is None:
        return _side_failure(Phase.PRE_PLACE, "cannot settle on the place pose")
    up = interpolate_track(c, q_place, [waypoints.grasp, waypoints.lift], resolution, env, threshold, cfg)
    if not up.ok:
        return _side_failure(Phase.PRE_PLACE, _segment_reason(up))
    c, env = phase_geometry(Phase.RETRACT, workcell, in_hand)
    retract = interpolate_track(
        c, q_place, [waypoints.grasp, waypoints.approach, waypoints.entry], resolution, env, threshold, cfg
    )
    if not retract.ok:
        return _side_failure(Phase.RETRACT, _segment_reason(retract))
    return SidePlan(
        True,
        [(Phase.PRE_PLACE, up.configs[::-1]), (Phase.PLACE, [q_place]), (Phase.RETRACT, retract.configs)],
    )


def plan_transit(
    workcell: Workcell,
    pick: SidePlan,
    place: SidePlan,
    in_hand: Pose,
    prm_cfg: PrmCfg = PrmCfg(),
    seed: int = 0,
) -> SidePlan:
    c, env = phase_geometry(Phase.TRANSIT, workcell, in_hand)
    try:
        transit = prm_connect(c, pick.lift_config, place.lift_config, env, prm_cfg, seed)
    except InputError as e:
        return _side_failure(Phase.TRANSIT, str(e))
    if not transit.ok:
        return _side_failure(Phase.TRANSIT, f"{transit.reason} {transit.stats}")
    return SidePlan(True, [(Phase.TRANSIT, transit.samples)])


def join(
    workcell: Workcell,
    schedule: WaypointSchedule,
    in_hand: Pose,
    *plans: SidePlan,
) -> PickPlaceSolution:
    """Concatenate side plans into a solution, or reject on the first failed one."""
    for p in plans:
        if not p.ok:
            return PickPlaceSolution(
                False, None, schedule, in_hand, failed_phase=p.failed_phase, reason=p.reason,
                logs=[f"{p.failed_phase.value}: {p.reason}"],
            )
    parts = [part for p in plans for part in p.parts]
    traj = JointTrajectory.from_parts(workcell.chain, parts, schedule.resolution)
    logs = [f"{ph.value}: samples {a}-{b}" for ph, a, b in traj.phase_table()]
    return PickPlaceSolution(True, traj, schedule, in_hand, logs=logs)


def assemble(
    candidate,
    workcell: Workcell,
    schedule: Optional[WaypointSchedule] = None,
    cfg: TrajectoryCfg = TrajectoryCfg(),
    prm_cfg: PrmCfg = PrmCfg(),
    threshold: float = 0.05,
    seed: int = 0,
    oT_alpha: Optional[Pose] = None,
) -> PickPlaceSolution:
    """
    Full labelled trajectory for one denoised candidate (a ``DenoiseState``).
    Any failing segment rejects the candidate with the phase it failed in.
    """
    oT_alpha = workcell.target.pose if oT_alpha is None else oT_alpha
    res = (cfg.resolution_m, cfg.resolution_rad)
    sched = schedule or WaypointSchedule.build(candidate.hT_alpha, candidate.hT_beta, res)
    X = workcell.in_hand(sched.pick.grasp, oT_alpha)
    pick = plan_pick(workcell, sched.pick, candidate.stack.e_q_alpha, X, res, cfg, threshold)
    if not pick.ok:
        return join(workcell, sched, X, pick)
    place = plan_place(workcell, sched.place, candidate.stack.q_beta, X, res, cfg, threshold)
    if not place.ok:
        return join(workcell, sched, X, place)
    transit = plan_transit(workcell, pick, place, X, prm_cfg, seed)
    return join(workcell, sched, X, pick, transit, place)


def replan_place(
    solution: PickPlaceSolution,
    measured: Pose,
    workcell: Workcell,
    cfg: TrajectoryCfg = TrajectoryCfg(),
    threshold: float = 0.05,
) -> PickPlaceSolution:
    """
    Redo the place phases for an object pose ``measured`` with the hand at the
    place-side lift config. The hand place pose is recomputed so the object
    still lands on the planned pose; pick and transit samples are kept.
    """
    if not solution.ok or solution.trajectory is None:
        raise InputError("replanning needs a valid solution")
    traj = solution.trajectory
    chain = workcell.chain
    q_lift = traj.segment(Phase.PRE_PLACE)[0]
    hT_lift = forward_kinematics(chain, q_lift)
    X_old = solution.place_in_hand or solution.in_hand
    X_new = hT_lift.inverse() @ measured
    dm, drad = pose_distance(X_new, X_old)
    if dm <= 1e-12 and drad <= 1e-12:
        return solution

    def keep(reason: str) -> PickPlaceSolution:
        log.info("replan kept the original place phases: %s", reason)
        return replace(solution, replan_failed=True, logs=solution.logs + [f"replan: {reason}"])

    goal = solution.object_at_place
    hand = goal @ X_new.inverse()
    if hand.rotation[2, 2] > UPWARD_APPROACH:
        return keep("hand would approach the placement from below")
    res = traj.resolution
    place = Waypoints.around(hand, APPROACH_OFFSET, ENTRY_OFFSET)
    held = workcell.held_chain(X_new)
    down = interpolate_track(held, q_lift, [hT_lift, place.lift, place.grasp], res, workcell.env_place, threshold, cfg)
    if not down.ok:
        return keep(f"pre-place {_segment_reason(down)}")
    q_place = down.configs[-1]
    retract = interpolate_track(
        chain, q_place, [place.grasp, place.approach, place.entry], res, workcell.env_transit, threshold, cfg
    )
    if not retract.ok:
        return keep(f"retract {_segment_reason(retract)}")

    kept = [(p, [q]) for p, q in zip(traj.phases, traj.configs) if p not in (Phase.PRE_PLACE, Phase.PLACE, Phase.RETRACT)]
    parts = kept + [(Phase.PRE_PLACE, down.configs), (Phase.PLACE, [q_place]), (Phase.RETRACT, retract.configs)]
    new_traj = JointTrajectory.from_parts(chain, parts, res)
    return PickPlaceSolution(
        True,
        new_traj,
        replace(solution.schedule, place=place),
        solution.in_hand,
        place_in_hand=X_new,
        logs=solution.logs + ["replan: place phases recomputed"],
    )


# ---------- Audit ----------

@dataclass(frozen=True, eq=False)
class AuditReport:
    violations: list[str]
    samples: int

    @property
    def ok(self) -> bool:
        return not self.violations


def _offset_violations(side: str, w: Waypoints) -> list[str]:
    out = []
    d = float(np.linalg.norm(w.approach.translation - w.grasp.translation))
    if abs(d - APPROACH_OFFSET) > OFFSET_TOLERANCE:
        out.append(f"{side}: approach offset {d:.12f} m")
    if np.max(np.abs(w.approach.rotation - w.grasp.rotation)) > OFFSET_TOLERANCE:
        out.append(f"{side}: approach rotation differs from grasp")
    de = w.entry.translation - w.approach.translation
    if np.max(np.abs(de - np.array([0.0, 0.0, ENTRY_OFFSET]))) > OFFSET_TOLERANCE:
        out.append(f"{side}: entry offset {de.tolist()}")
    if np.max(np.abs(w.entry.rotation - w.approach.rotation)) > OFFSET_TOLERANCE:
        out.append(f"{side}: entry rotation differs from approach")
    if abs(w.lift.translation[2] - w.entry.translation[2]) > OFFSET_TOLERANCE:
        out.append(f"{side}: lift height differs from entry height")
    return out


def audit_trajectory(
    traj: JointTrajectory,
    workcell: Workcell,
    in_hand: Pose,
    schedule: Optional[WaypointSchedule] = None,
    place_in_hand: Optional[Pose] = None,
    cfg: TrajectoryCfg = TrajectoryCfg(),
) -> AuditReport:
    """Phase order, waypoint offsets, per-step joint bound, joint limits and per-phase clearance."""
    chain = workcell.chain
    out: list[str] = []
    order = [p for p, _, _ in traj.phase_table()]
    if order != list(PHASE_ORDER):
        out.append(f"phase order {[p.value for p in order]}")
    if schedule is not None:
        out += _offset_violations("pick", schedule.pick) + _offset_violations("place", schedule.place)
    if len(traj) > 1:
        steps = np.max(np.abs(np.diff(traj.configs, axis=0)), axis=1)
        for i in np.flatnonzero(steps > cfg.max_joint_step + 1e-9):
            out.append(f"sample {i + 1}: joint step {steps[i]:.4f} rad")
    geometry = {p: phase_geometry(p, workcell, in_hand, place_in_hand) for p in set(traj.phases)}
    for i, (q, p) in enumerate(zip(traj.configs, traj.phases)):
        if not chain.within_limits(q):
            out.append(f"sample {i} ({p.value}): joint limits")
        c, env = geometry[p]
        clearance = min_clearance(c, q, env)
        if clearance < 0:
            out.append(f"sample {i} ({p.value}): clearance {clearance:.4g} m")
    return AuditReport(out, len(traj))
