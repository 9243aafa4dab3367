# core/denoise.py
"""
Constrained denoising.

Each state carries six joint configurations (grasp, place and their approach
and entry companions). At every step k = K-1 ... 0 the guidance twist for the
grasp pose is projected through the coupled Diff-IK QP and all six configs
are advanced by one Euler step, so every intermediate hand pose is reachable
and collision-free by construction. Final grasp poses are filtered on the
validity volume and ranked by the gravity-score volume; an empty survivor set
restarts the batch in the next score bin.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, TextIO

import numpy as np

from core.collision import min_clearance
from core.config import DenoiseCfg
from core.diffik import (
    CONFIG_NAMES,
    ConfigStack,
    DiffIkSolver,
    PlacementTarget,
    StepContext,
    place_target_twist,
    placement_error,
    track_pose,
)
from core.errors import BinExhausted, InitializationError, InputError
from core.guidance import GuidanceField, GuidanceQuery, NoiseSchedule, filter_and_sort
from core.kinematics import KinematicChain, forward_kinematics
from core.scene import FALLBACK_ORDER, SceneVolumes, ScoreBin
from core.se3 import Pose, pose_distance
from core.workcell import Workcell

log = logging.getLogger(__name__)

HAND_DOWN = np.diag([1.0, -1.0, -1.0])      # TCP approach axis pointing at the table
CONSISTENCY_TOLERANCE = 1e-3                 # [m] and [rad]
_SHUFFLE_STREAM = 0x5EED


# ---------- State ----------

@dataclass(frozen=True, eq=False)
class DenoiseState:
    k: int
    stack: ConfigStack
    hT_alpha: Pose
    hT_beta: Pose
    oT_beta: Optional[Pose] = None      # planned object pose at the place config, implied by the hand poses
    stream: int = 0

    @classmethod
    def at(cls, chain: KinematicChain, stack: ConfigStack, k: int, stream: int, oT_alpha: Optional[Pose]) -> "DenoiseState":
        hT_alpha = forward_kinematics(chain, stack.q_alpha)
        hT_beta = forward_kinematics(chain, stack.q_beta)
        oT_beta = None if oT_alpha is None else hT_beta @ hT_alpha.inverse() @ oT_alpha
        return cls(k, stack, hT_alpha, hT_beta, oT_beta, stream)


@dataclass(frozen=True, eq=False)
class Candidate:
    state: DenoiseState
    validity: float
    score: float
    diagnostics: list[dict] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class DenoiseResult:
    candidates: list[Candidate]
    bin_used: Optional[ScoreBin]
    reason: str = ""
    logs: list[str] = field(default_factory=list)
    finals: list[DenoiseState] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.candidates)


# ---------- Initialization ----------

def _seed_pose(rng: np.random.Generator, center: np.ndarray, cfg: DenoiseCfg) -> Pose:
    yaw = rng.uniform(-np.pi, np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    r = cfg.init_radius
    offset = np.array([rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(*cfg.init_height)])
    return Pose(Rz @ HAND_DOWN, np.asarray(center, dtype=float) + offset)


def _seed_config(chain: KinematicChain, rng: np.random.Generator, center: np.ndarray, cfg: DenoiseCfg) -> np.ndarray:
    return track_pose(chain, chain.home, _seed_pose(rng, center, cfg)).q


def _placement_center(target: PlacementTarget) -> np.ndarray:
    p = target.poses[0].translation.copy()
    if target.region is not None:
        p[:2] = target.region.mean(axis=1)
    return p


def initialize(
    workcell: Workcell,
    target: Optional[PlacementTarget],
    batch: int,
    seed: int,
    cfg: DenoiseCfg = DenoiseCfg(),
    oT_alpha: Optional[Pose] = None,
) -> list[DenoiseState]:
    """
    Sample ``batch`` collision-free starting states: downward-facing hand
    poses with random yaw above the object (and above the placement), reached
    by unconstrained tracking from the home config. State ``s`` draws from
    its own generator seeded by ``(seed, s)``.
    """
    if batch < 1:
        raise InputError("batch size must be at least 1")
    chain = workcell.chain
    oT_alpha = workcell.target.pose if oT_alpha is None else oT_alpha
    states = []
    for s in range(batch):
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        stack = None
        for _ in range(cfg.init_retries):
            qa = _seed_config(chain, rng, oT_alpha.translation, cfg)
            if min_clearance(chain, qa, workcell.env_pick) <= 0:
                continue
            if target is None:
                stack = ConfigStack.from_pair(qa, qa)
                break
            qb = _seed_config(chain, rng, _placement_center(target), cfg)
            held = workcell.held_chain(workcell.in_hand(forward_kinematics(chain, qa), oT_alpha))
            if min_clearance(held, qb, workcell.env_place) <= 0:
                continue
            stack = ConfigStack.from_pair(qa, qb)
            break
        if stack is None:
            raise InitializationError(
                f"state {s}: no collision-free seed in {cfg.init_retries} tries "
                f"(object at {np.round(oT_alpha.translation, 3).tolist()})"
            )
        states.append(DenoiseState.at(chain, stack, cfg.steps, s, oT_alpha if target is not None else None))
    log.debug("initialized %d states (seed %d)", len(states), seed)
    return states


# ---------- Step loop ----------

@dataclass(frozen=True, eq=False)
class _Geometry:
    """Chain and environment for each config; the place side carries the held object."""

    workcell: Workcell
    oT_alpha: Pose
    placing: bool

    def chains(self, stack: ConfigStack) -> Callable[[str], KinematicChain]:
        chain = self.workcell.chain
        if not self.placing:
            return lambda name: chain
        X = self.workcell.in_hand(forward_kinematics(chain, stack.q_alpha), self.oT_alpha)
        held = self.workcell.held_chain(X)
        return lambda name: held if name.endswith("beta") else chain

    def env(self, name: str):
        if self.placing and name.endswith("beta"):
            return self.workcell.env_place
        return self.workcell.env_pick

    def clearances(self, stack: ConfigStack, names: Sequence[str] = CONFIG_NAMES) -> dict[str, float]:
        chain_for = self.chains(stack)
        return {name: min_clearance(chain_for(name), stack.get(name), self.env(name)) for name in names}


def _safeguarded_update(
    geom: _Geometry,
    stack: ConfigStack,
    velocities: dict[str, np.ndarray],
    dt: float,
    halvings: int,
) -> tuple[ConfigStack, float, dict[str, float]]:
    """
    Euler step, halved until no config ends below ``min(clearance before, 0)``.
    After ``halvings`` halvings the step is dropped (scale 0).
    """
    chain = geom.workcell.chain
    before = geom.clearances(stack)
    moving = [n for n in CONFIG_NAMES if np.any(velocities[n])]
    if geom.placing and "q_alpha" in moving:
        moving = list(CONFIG_NAMES)     # the held object moves with the grasp
    scale = 1.0
    for _ in range(halvings + 1):
        cand = stack.advanced({n: scale * velocities[n] for n in moving}, dt, chain)
        after = dict(before)
        after.update(geom.clearances(cand, moving))
        if all(after[n] >= min(before[n], 0.0) for n in moving):
            return cand, scale, after
        scale *= 0.5
    return stack, 0.0, before


def _denoise_stream(
    state: DenoiseState,
    guidance: GuidanceField,
    geom: _Geometry,
    target: Optional[PlacementTarget],
    schedule: NoiseSchedule,
    cfg: DenoiseCfg,
    threshold: float,
    bin: Optional[ScoreBin],
    attempt: int,
    volume_files: Mapping[str, str],
    sink: Optional[TextIO],
) -> tuple[DenoiseState, list[dict]]:
    wc = geom.workcell
    chain = wc.chain
    base = StepContext(
        chain,
        env_alpha=wc.env_pick,
        env_beta=wc.env_place if target is not None else wc.env_pick,
        threshold=threshold,
        dt=schedule.dt,
        approach_weight=cfg.approach_weight,
        stabilization=cfg.stabilization,
    )
    solver = DiffIkSolver()
    stack = state.stack
    records: list[dict] = []
    for k in range(schedule.steps - 1, -1, -1):
        hT_a = forward_kinematics(chain, stack.q_alpha)
        query = GuidanceQuery(hT_a, k, bin, schedule.steps, state.stream, attempt, dict(volume_files))
        xi = guidance.twist(query)
        if target is None:
            step = solver.step(base, stack, xi)
        else:
            X = hT_a.inverse() @ geom.oT_alpha
            # object pose follows the place hand, never integrated separately
            oT_b = forward_kinematics(chain, stack.q_beta) @ X
            ctx = replace(base, held_chain=wc.held_chain(X))
            place = place_target_twist(oT_b, target, k + 1, schedule.dt)
            step = solver.step(ctx, stack, xi, target, place, geom.oT_alpha, oT_b)

        if step.ok:
            stack, scale, clear = _safeguarded_update(geom, stack, step.velocities, schedule.dt, cfg.safeguard_halvings)
        else:
            scale, clear = 0.0, geom.clearances(stack)
        rec = {
            "stream": state.stream,
            "attempt": attempt,
            "bin": bin.label if bin is not None else None,
            "k": k,
            **step.record(),
            "scale": scale,
            "min_clearance": min(clear.values()),
            "within_limits": all(chain.within_limits(q) for _, q in stack.items()),
        }
        records.append(rec)
        if sink is not None:
            sink.write(json.dumps(rec) + "\n")
    final = DenoiseState.at(chain, stack, 0, state.stream, geom.oT_alpha if target is not None else None)
    return final, records


def _rank(
    finals: Sequence[DenoiseState],
    diags: Sequence[list[dict]],
    volumes: Optional[SceneVolumes],
    cfg: DenoiseCfg,
    seed: int,
    attempt: int,
) -> list[Candidate]:
    if volumes is None:
        ranked = [(i, float("nan"), float("nan")) for i in range(len(finals))]
    else:
        ranked = [
            (r.index, r.validity, r.score)
            for r in filter_and_sort(
                [f.hT_alpha for f in finals],
                volumes,
                cfg.validity_threshold,
                sort=cfg.sort_by_score,
                use_validity=cfg.use_validity_filter,
            )
        ]
    if not cfg.sort_by_score:
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt, _SHUFFLE_STREAM]))
        ranked = [ranked[i] for i in rng.permutation(len(ranked))]
    return [Candidate(finals[i], v, s, diags[i]) for i, v, s in ranked]


def run(
    states: Sequence[DenoiseState],
    guidance: GuidanceField,
    workcell: Workcell,
    target: Optional[PlacementTarget],
    schedule: NoiseSchedule = NoiseSchedule(),
    volumes: Optional[SceneVolumes] = None,
    cfg: DenoiseCfg = DenoiseCfg(),
    *,
    oT_alpha: Optional[Pose] = None,
    bins: Sequence[ScoreBin] = FALLBACK_ORDER,
    threshold: float = 0.05,
    seed: int = 0,
    volume_files: Optional[Mapping[str, str]] = None,
    log_path: Optional[str | Path] = None,
) -> DenoiseResult:
    """
    Denoise every state for ``schedule.steps`` steps, then filter and rank.
    With ``target=None`` only the grasp config moves (pick-only mode).
    Every bin in ``bins`` restarts from the same initial states. Step records
    are appended to ``log_path``.
    """
    if not states:
        raise InputError("denoising needs at least one initial state")
    oT_alpha = workcell.target.pose if oT_alpha is None else oT_alpha
    geom = _Geometry(workcell, oT_alpha, target is not None)
    order: list[Optional[ScoreBin]] = list(bins) if cfg.condition_on_bin else [None]
    logs: list[str] = []
    sink = open(log_path, "a") if log_path else None
    try:
        for attempt, b in enumerate(order):
            label = b.label if b is not None else "any"
            try:
                out = [
                    _denoise_stream(s, guidance, geom, target, schedule, cfg, threshold, b, attempt, volume_files or {}, sink)
                    for s in states
                ]
            except BinExhausted as e:
                logs.append(f"bin {e.bin_name}: nothing to attract toward")
                log.info("bin %s exhausted, falling back", e.bin_name)
                continue
            finals = [f for f, _ in out]
            candidates = _rank(finals, [d for _, d in out], volumes, cfg, seed, attempt)
            if candidates:
                logs.append(f"bin {label}: {len(candidates)}/{len(states)} candidates kept")
                return DenoiseResult(candidates, b, "", logs, finals)
            logs.append(f"bin {label}: no candidate passed the validity filter")
            log.info("bin %s: empty survivor set", label)
    finally:
        if sink is not None:
            sink.close()
    return DenoiseResult([], None, "all bins exhausted", logs, [])


# ---------- Validation ----------

@dataclass(frozen=True)
class Violation:
    candidate: int
    kind: str          # limits | clearance | consistency | placement
    config: str
    detail: str


@dataclass(frozen=True, eq=False)
class ValidationReport:
    violations: list[Violation]
    checked: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)


def validate_result(
    result: DenoiseResult,
    workcell: Workcell,
    target: Optional[PlacementTarget] = None,
    cfg: DenoiseCfg = DenoiseCfg(),
    oT_alpha: Optional[Pose] = None,
    clearance_tolerance: float = 0.0,
) -> ValidationReport:
    """
    Re-check limits, clearance, pick/place consistency and placement error for
    every candidate. The consistency check compares the stored ``oT_beta`` with
    the pose implied by the two hand configs: states from ``DenoiseState.at``
    pass by construction, edited or reloaded states need not.
    """
    chain = workcell.chain
    oT_alpha = workcell.target.pose if oT_alpha is None else oT_alpha
    geom = _Geometry(workcell, oT_alpha, target is not None)
    tol_m, tol_rad = cfg.placement_tolerance
    out: list[Violation] = []
    for i, cand in enumerate(result.candidates):
        stack = cand.state.stack
        for name, q in stack.items():
            if not chain.within_limits(q):
                worst = float(np.max(np.maximum(chain.q_min - q, q - chain.q_max)))
                out.append(Violation(i, "limits", name, f"exceeds limit by {worst:.3g} rad"))
        for name, c in geom.clearances(stack).items():
            if c < -clearance_tolerance:
                out.append(Violation(i, "clearance", name, f"clearance {c:.4g} m"))
        oT_beta = cand.state.oT_beta
        if target is None or oT_beta is None:
            continue
        hT_a = forward_kinematics(chain, stack.q_alpha)
        hT_b = forward_kinematics(chain, stack.q_beta)
        dm, drad = pose_distance(oT_beta, hT_b @ hT_a.inverse() @ oT_alpha)
        if dm > CONSISTENCY_TOLERANCE or drad > CONSISTENCY_TOLERANCE:
            out.append(Violation(i, "consistency", "q_beta", f"{dm:.3g} m / {drad:.3g} rad"))
        e = placement_error(oT_beta, target)
        em, erad = float(np.linalg.norm(e[3:])), float(np.linalg.norm(e[:3]))
        if em > tol_m or erad > tol_rad:
            out.append(Violation(i, "placement", "q_beta", f"{em:.3g} m / {erad:.3g} rad"))
    return ValidationReport(out, len(result.candidates))
