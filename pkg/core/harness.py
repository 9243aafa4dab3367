# core/harness.py
"""
Detection pipelines with per-stage timing.

    ours       initialize -> denoise -> assemble candidates in ranked order
    baseline   grasps by descending score -> pick trajectory -> 12 place yaws

Both return the first trajectory that passes the audit, plus RunMetrics.
"""
from __future__ import annotations

import logging
import shlex
import time
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from core.config import RunCfg
from core.denoise import initialize, run, validate_result
from core.diffik import PlacementTarget, placement_error
from core.errors import InitializationError, InputError
from core.guidance import ExternalField, GuidanceField, NoiseSchedule, OracleField
from core.kinematics import KinematicChain
from core.scene import FALLBACK_ORDER, GraspCandidate, SceneVolumes, ScoreBin, bake_decoder_volumes, depth_to_tsdf
from core.se3 import Pose
from core.synth import GRASP_CLEARANCE, Scene, synthesize_grasps
from core.trajectory import (
    Phase,
    PickPlaceSolution,
    WaypointSchedule,
    Waypoints,
    assemble,
    audit_trajectory,
    join,
    plan_pick,
    plan_place,
    plan_transit,
)
from core.workcell import Workcell

log = logging.getLogger(__name__)

# Closing region between the open fingers, in the grasp frame [m].
CLOSING_REGION = (np.array([-0.01, -0.0425, -0.03]), np.array([0.01, 0.0425, 0.01]))
_PICK_PHASES = {Phase.ENTRY, Phase.APPROACH, Phase.GRASP_CLOSE, Phase.LIFT}


# ---------- Scene preparation ----------

def target_selection(scene: Scene) -> int:
    """Object with the highest centroid; ties go to the lowest id."""
    if not scene.objects:
        raise InputError("scene has no objects to pick")
    best = max(scene.objects, key=lambda o: (o.centroid[2], -o.id))
    return best.id


def in_closing_region(grasp: Pose, points_world: np.ndarray) -> bool:
    """True when at least one point lies between the fingers of ``grasp``."""
    local = grasp.inverse().apply(np.asarray(points_world, dtype=float).reshape(-1, 3))
    lo, hi = CLOSING_REGION
    return bool(np.any(np.all((local >= lo) & (local <= hi), axis=1)))


def hand_groups(chain: KinematicChain):
    return [g for g in chain.links if g.hand and g.frame == "tcp"]


def scene_grasps(scene: Scene, chain: KinematicChain, clearance: float = GRASP_CLEARANCE) -> list[GraspCandidate]:
    """Collision-filtered grasps on every object in the scene."""
    hand = hand_groups(chain)
    out: list[GraspCandidate] = []
    for obj in scene.objects:
        out += synthesize_grasps(obj, scene.bodies(exclude=[obj.id]), hand, clearance)
    return out


def bake_volumes(scene: Scene, target_id: int, grasps: Sequence[GraspCandidate]) -> SceneVolumes:
    """Render the scene, fuse full and target-masked TSDFs and bake the decoder volumes."""
    grid = scene.grid()
    depth, labels = scene.render()
    full = depth_to_tsdf(depth, scene.camera, grid)
    masked = depth_to_tsdf(depth, scene.camera, grid, mask=labels == target_id, semantics="tsdf_object")
    if masked.all_invalid:
        log.warning("target %d is not visible from the camera", target_id)
    validity, score = bake_decoder_volumes(grasps, grid)
    return SceneVolumes(full.volume, masked.volume, validity, score)


@dataclass(frozen=True, eq=False)
class DetectionTask:
    scene: Scene
    target_id: int
    placement: PlacementTarget
    chain: KinematicChain
    grasps: tuple[GraspCandidate, ...]           # detector output over the whole scene
    volumes: Optional[SceneVolumes] = None

    @classmethod
    def prepare(
        cls,
        scene: Scene,
        placement: PlacementTarget,
        chain: KinematicChain,
        clearance: float = GRASP_CLEARANCE,
        target_id: Optional[int] = None,
        grasps: Optional[Sequence[GraspCandidate]] = None,
    ) -> "DetectionTask":
        tid = target_selection(scene) if target_id is None else target_id
        scene.object(tid)
        grasps = scene_grasps(scene, chain, clearance) if grasps is None else list(grasps)
        volumes = bake_volumes(scene, tid, [g for g in grasps if g.object_id == tid])
        return cls(scene, tid, placement, chain, tuple(grasps), volumes)

    @property
    def target_grasps(self) -> list[GraspCandidate]:
        return [g for g in self.grasps if g.object_id == self.target_id]

    def workcell(self, cfg: RunCfg) -> Workcell:
        return Workcell(
            self.chain, self.scene, self.target_id, self.placement.support,
            cfg.contact.held_radius, cfg.contact.held_points,
        )


# ---------- Metrics ----------

@dataclass(eq=False)
class RunMetrics:
    method: str
    success: bool = False
    times: dict[str, float] = field(default_factory=dict)     # [s] per stage
    pick_attempts: int = 0
    place_attempts: int = 0
    audit_violations: int = 0
    validation_violations: int = 0
    bin_used: Optional[str] = None
    placement_error_m: float = float("nan")
    placement_error_rad: float = float("nan")
    reason: str = ""
    logs: list[str] = field(default_factory=list)

    @property
    def detection_time(self) -> float:
        return self.times.get("total", 0.0)

    @property
    def trajectory_ik_time(self) -> float:
        return self.times.get("trajectory", 0.0)

    def record(self, timing: bool = True) -> dict:
        """Flat row; ``timing=False`` leaves out the wall-clock fields."""
        row = {
            "method": self.method,
            "success": self.success,
            "pick_attempts": self.pick_attempts,
            "place_attempts": self.place_attempts,
            "audit_violations": self.audit_violations,
            "validation_violations": self.validation_violations,
            "bin_used": self.bin_used,
            "placement_error_m": self.placement_error_m,
            "placement_error_rad": self.placement_error_rad,
            "reason": self.reason,
        }
        if timing:
            row["detection_time"] = self.detection_time
            row["trajectory_ik_time"] = self.trajectory_ik_time
            row.update({f"time_{k}": v for k, v in self.times.items()})
        return row


class _Stopwatch:
    def __init__(self, times: dict[str, float]):
        self.times = times
        self.start = time.monotonic()

    def lap(self, stage: str, since: float) -> float:
        now = time.monotonic()
        self.times[stage] = self.times.get(stage, 0.0) + (now - since)
        return now

    def stop(self) -> None:
        self.times["total"] = time.monotonic() - self.start


def _finish(metrics: RunMetrics, solution: PickPlaceSolution, target: PlacementTarget) -> None:
    e = placement_error(solution.object_at_place, target)
    metrics.success = True
    metrics.placement_error_m = float(np.linalg.norm(e[3:]))
    metrics.placement_error_rad = float(np.linalg.norm(e[:3]))


def _accept(solution: PickPlaceSolution, workcell: Workcell, metrics: RunMetrics, cfg: RunCfg) -> bool:
    if not solution.ok:
        return False
    report = audit_trajectory(
        solution.trajectory, workcell, solution.in_hand, solution.schedule, solution.place_in_hand, cfg.trajectory
    )
    if not report.ok:
        metrics.audit_violations += len(report.violations)
        metrics.logs += [f"audit: {v}" for v in report.violations[:5]]
        log.warning("trajectory rejected by audit (%d violations)", len(report.violations))
        return False
    return True


# ---------- Baseline ----------

def _rz(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def placement_candidates(target: PlacementTarget, yaw_count: int = 12) -> list[Pose]:
    """Discrete object poses to try: ``yaw_count`` yaws per base pose when yaw is free."""
    out = []
    for base in target.poses:
        p = base.translation.copy()
        if target.region is not None:
            p[:2] = target.region.mean(axis=1)
        if not target.free_yaw:
            out.append(Pose(base.rotation, p))
            continue
        for i in range(yaw_count):
            out.append(Pose(_rz(2 * np.pi * i / yaw_count) @ base.rotation, p))
    return out


def baseline_detect(task: DetectionTask, cfg: RunCfg = RunCfg()) -> tuple[Optional[PickPlaceSolution], RunMetrics]:
    """
    Depth-first search over detected grasps in descending score: grasps whose
    closing region misses the target cloud are skipped, every remaining grasp
    is one pick attempt and every place yaw tried after a successful pick is
    one place attempt.
    """
    metrics = RunMetrics("baseline")
    clock = _Stopwatch(metrics.times)
    wc = task.workcell(cfg)
    tcfg = cfg.trajectory
    res = (tcfg.resolution_m, tcfg.resolution_rad)
    threshold = cfg.contact.threshold
    cloud = wc.target.surface_points()
    placements = placement_candidates(task.placement, cfg.bench.yaw_candidates)

    ranked = sorted(task.grasps, key=lambda g: -g.score)
    t = time.monotonic()
    for g in ranked:
        if not in_closing_region(g.pose, cloud):
            continue
        metrics.pick_attempts += 1
        X = wc.in_hand(g.pose)
        pick_wp = Waypoints.around(g.pose)
        pick = plan_pick(wc, pick_wp, task.chain.home, X, res, tcfg, threshold)
        if not pick.ok:
            continue
        for oT_beta in placements:
            metrics.place_attempts += 1
            place_wp = Waypoints.around(oT_beta @ X.inverse())
            place = plan_place(wc, place_wp, pick.lift_config, X, res, tcfg, threshold)
            if not place.ok:
                continue
            transit = plan_transit(wc, pick, place, X, cfg.prm, cfg.seed)
            solution = join(wc, WaypointSchedule(pick_wp, place_wp, res), X, pick, transit, place)
            if not _accept(solution, wc, metrics, cfg):
                continue
            t = clock.lap("trajectory", t)
            clock.stop()
            _finish(metrics, solution, task.placement)
            metrics.logs.append(f"grasp score {g.score:.1f}: pick {metrics.pick_attempts}, place {metrics.place_attempts}")
            return solution, metrics
    clock.lap("trajectory", t)
    clock.stop()
    metrics.reason = "grasp list exhausted"
    metrics.logs.append(f"{metrics.pick_attempts} pick / {metrics.place_attempts} place attempts, none feasible")
    return None, metrics


# ---------- Denoising pipeline ----------

def make_guidance(task: DetectionTask, cfg: RunCfg, schedule: NoiseSchedule) -> GuidanceField:
    if cfg.guidance == "oracle":
        return OracleField(task.target_grasps, schedule, cfg.seed)
    if cfg.guidance == "external":
        if not cfg.guidance_command:
            raise InputError("external guidance needs guidance_command")
        return ExternalField.spawn(shlex.split(cfg.guidance_command), cfg.guidance_timeout)
    raise InputError(f"unknown guidance {cfg.guidance!r} (oracle | external)")


def noise_schedule(cfg: RunCfg) -> NoiseSchedule:
    d = cfg.denoise
    return NoiseSchedule(d.steps, d.dt, d.sigma_angular, d.sigma_linear)


def ours_detect(
    task: DetectionTask,
    guidance: GuidanceField,
    cfg: RunCfg = RunCfg(),
    *,
    volume_files: Optional[dict] = None,
    log_path=None,
) -> tuple[Optional[PickPlaceSolution], RunMetrics]:
    """
    Denoise a batch of grasp/place pairs, then assemble trajectories for the
    ranked candidates. When every candidate of a bin fails assembly, the
    remaining bins are denoised in turn. ``log_path`` is emptied once, then
    every pass appends its step records.
    """
    metrics = RunMetrics("ours")
    clock = _Stopwatch(metrics.times)
    wc = task.workcell(cfg)
    schedule = noise_schedule(cfg)
    threshold = cfg.contact.threshold
    if log_path:
        Path(log_path).write_text("")

    t = time.monotonic()
    try:
        states = initialize(wc, task.placement, cfg.denoise.batch, cfg.seed, cfg.denoise)
    except InitializationError as e:
        clock.lap("init", t)
        clock.stop()
        metrics.reason = str(e)
        return None, metrics
    t = clock.lap("init", t)

    bins: list[ScoreBin] = [ScoreBin.parse(b) for b in cfg.bin_order] or list(FALLBACK_ORDER)
    while True:
        result = run(
            states, guidance, wc, task.placement, schedule, task.volumes, cfg.denoise,
            bins=bins, threshold=threshold, seed=cfg.seed, volume_files=volume_files, log_path=log_path,
        )
        t = clock.lap("denoise", t)
        metrics.logs += result.logs
        if not result.ok:
            break
        report = validate_result(result, wc, task.placement, cfg.denoise)
        metrics.validation_violations += len(report.violations)
        flagged = {v.candidate for v in report.violations}
        for i, cand in enumerate(result.candidates):
            if i in flagged:
                continue
            metrics.pick_attempts += 1
            sol = assemble(cand.state, wc, None, cfg.trajectory, cfg.prm, threshold, cfg.seed)
            if sol.failed_phase is None or sol.failed_phase not in _PICK_PHASES:
                metrics.place_attempts += 1
            if _accept(sol, wc, metrics, cfg):
                clock.lap("trajectory", t)
                clock.stop()
                metrics.bin_used = result.bin_used.label if result.bin_used is not None else None
                _finish(metrics, sol, task.placement)
                metrics.logs.append(f"candidate {i} (stream {cand.state.stream}) assembled")
                return sol, metrics
            metrics.logs.append(f"candidate {i}: {sol.reason or 'audit failed'}")
        t = clock.lap("trajectory", t)
        if result.bin_used is None or result.bin_used not in bins:
            break
        bins = bins[bins.index(result.bin_used) + 1:]
        if not bins:
            break
    clock.stop()
    metrics.reason = "no candidate produced a feasible trajectory"
    return None, metrics


def detect(
    task: DetectionTask,
    method: str,
    cfg: RunCfg = RunCfg(),
    guidance: Optional[GuidanceField] = None,
    **kwargs,
) -> tuple[Optional[PickPlaceSolution], RunMetrics]:
    if method == "baseline":
        return baseline_detect(task, cfg)
    if method != "ours":
        raise InputError(f"unknown method {method!r} (ours | baseline)")
    own = guidance is None
    field_ = make_guidance(task, cfg, noise_schedule(cfg)) if own else guidance
    try:
        return ours_detect(task, field_, cfg, **kwargs)
    finally:
        if own:
            field_.close()
