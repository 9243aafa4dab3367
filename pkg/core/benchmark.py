# core/benchmark.py
"""Three-scenario comparison of the denoising pipeline against the baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from core.config import RunCfg, override
from core.diffik import PlacementTarget
from core.errors import InputError
from core.harness import DetectionTask, detect, target_selection
from core.kinematics import KinematicChain
from core.synth import RACK_HALF_EXTENTS, Scene, SceneObject, SceneSpec, rack_fixtures, synthesize_scene, upright_pose

log = logging.getLogger(__name__)

FAILURES_PER_SCENE = 2
HISTOGRAM_BINS = 20


@dataclass(frozen=True)
class Scenario:
    id: str
    pick_center: tuple[float, float]
    rack_center: tuple[float, float]
    wall_gap: Optional[float] = None        # flanking walls around the rack
    count: tuple[int, int] = (1, 5)
    region_size: float = 0.2

    def build_scene(self, seed: int) -> Scene:
        rng = np.random.default_rng(np.random.SeedSequence([seed, len(self.id)]))
        count = int(rng.integers(self.count[0], self.count[1] + 1))
        spec = SceneSpec(count, self.pick_center, self.region_size)
        return synthesize_scene(spec, seed, rack_fixtures(self.rack_center, wall_gap=self.wall_gap))

    def placement_for(self, obj: SceneObject) -> PlacementTarget:
        """Upright on the rack top, yaw free."""
        x, y = self.rack_center
        base = upright_pose(x, y, obj.half_height, 0.0, base_z=2 * RACK_HALF_EXTENTS[2])
        return PlacementTarget.upright(base, support="rack")


SCENARIOS = {
    "easy": Scenario("easy", (0.5, 0.0), (0.45, 0.4)),
    "far-pick": Scenario("far-pick", (0.68, -0.1), (0.45, 0.4)),
    "obstructed-place": Scenario("obstructed-place", (0.5, 0.0), (0.45, 0.4), wall_gap=0.16),
}


def scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise InputError(f"unknown scenario {name!r} ({', '.join(SCENARIOS)})") from None


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    trials: pd.DataFrame
    aggregate: pd.DataFrame
    histogram: pd.DataFrame

    def write(self, out_dir: str | Path) -> dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "trials": out / "bench_trials.csv",
            "aggregate": out / "bench_aggregate.csv",
            "histogram": out / "bench_histogram.csv",
        }
        self.trials.to_csv(paths["trials"], index=False)
        self.aggregate.to_csv(paths["aggregate"], index=False)
        self.histogram.to_csv(paths["histogram"], index=False)
        return {k: str(v) for k, v in paths.items()}


# ---------- Per-scene loop ----------

def run_scene(
    sc: Scenario,
    method: str,
    trial: int,
    seed: int,
    chain: KinematicChain,
    cfg: RunCfg,
) -> list[dict]:
    """
    Detect targets one after another: a placed target leaves the scene, and
    two consecutive failures end it.
    """
    scene = sc.build_scene(seed)
    rows: list[dict] = []
    failures = 0
    for n in range(cfg.bench.max_detections_per_scene):
        if not scene.objects or failures >= FAILURES_PER_SCENE:
            break
        tid = target_selection(scene)
        placement = sc.placement_for(scene.object(tid))
        task = DetectionTask.prepare(scene, placement, chain, cfg.contact.grasp_clearance, tid)
        run_cfg = override(cfg, seed=seed * 100 + n)
        _, metrics = detect(task, method, run_cfg)
        rows.append(
            {
                "scenario": sc.id,
                "trial": trial,
                "seed": seed,
                "detection": n,
                "target_id": tid,
                "objects": len(scene.objects),
                **metrics.record(),
            }
        )
        if metrics.success:
            scene = scene.without(tid)
            failures = 0
        else:
            failures += 1
            log.info("%s/%s trial %d: detection %d failed (%s)", sc.id, method, trial, n, metrics.reason)
    return rows


# ---------- Tables ----------

def _iqr(s: pd.Series) -> float:
    return float(s.quantile(0.75) - s.quantile(0.25))


def aggregate(trials: pd.DataFrame) -> pd.DataFrame:
    """Median/IQR detection time, attempt statistics and success rate per scenario and method."""
    if trials.empty:
        return pd.DataFrame()
    g = trials.groupby(["scenario", "method"], sort=False)
    table = g.agg(
        detections=("success", "size"),
        success_rate=("success", "mean"),
        time_median=("detection_time", "median"),
        time_iqr=("detection_time", _iqr),
        trajectory_ik_time_median=("trajectory_ik_time", "median"),
        pick_attempts_mean=("pick_attempts", "mean"),
        pick_attempts_median=("pick_attempts", "median"),
        place_attempts_mean=("place_attempts", "mean"),
        place_attempts_median=("place_attempts", "median"),
        placement_error_m_median=("placement_error_m", "median"),
        audit_violations=("audit_violations", "sum"),
    )
    return table.reset_index()


def histogram(trials: pd.DataFrame, bins: int = HISTOGRAM_BINS) -> pd.DataFrame:
    """Detection-time counts on shared bin edges, one row per (scenario, method, bin)."""
    if trials.empty:
        return pd.DataFrame(columns=["scenario", "method", "bin_lo", "bin_hi", "count"])
    t = trials["detection_time"].to_numpy(dtype=float)
    hi = float(t.max()) if t.max() > 0 else 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    rows = []
    for (sc, method), part in trials.groupby(["scenario", "method"], sort=False):
        counts, _ = np.histogram(part["detection_time"].to_numpy(dtype=float), edges)
        rows += [
            {"scenario": sc, "method": method, "bin_lo": lo, "bin_hi": b, "count": int(c)}
            for lo, b, c in zip(edges[:-1], edges[1:], counts)
        ]
    return pd.DataFrame(rows)


def run_benchmark(
    scenarios: Sequence[str],
    trials: int,
    methods: Sequence[str],
    chain: KinematicChain,
    cfg: RunCfg = RunCfg(),
    seeds: Optional[Sequence[int]] = None,
) -> BenchmarkResult:
    """
    ``trials`` scenes per scenario; every method sees the same scene seeds.
    Partial failures are data, never raised.
    """
    if trials < 1:
        raise InputError("trials must be at least 1")
    seeds = list(seeds) if seeds is not None else [cfg.seed + t for t in range(trials)]
    if len(seeds) != trials:
        raise InputError(f"{len(seeds)} seeds for {trials} trials")
    rows: list[dict] = []
    for name in scenarios:
        sc = scenario(name)
        for method in methods:
            for t, seed in enumerate(seeds):
                rows += run_scene(sc, method, t, seed, chain, cfg)
            log.info("%s/%s: %d trials done", name, method, trials)
    df = pd.DataFrame(rows)
    return BenchmarkResult(df, aggregate(df), histogram(df))
