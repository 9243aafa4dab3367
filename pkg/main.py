# main.py
"""
Command-line entry point.

    gen-scene      synthesize a scenario scene manifest
    gen-grasps     antipodal grasps for every object in a scene
    bake-volumes   TSDFs and decoder volumes for the scene target
    detect         plan one pick-and-place (ours | baseline)
    bench          run the scenario benchmark
    audit          re-validate a trajectory file
    export-plots   SVG figures from benchmark CSVs

Exit codes: 0 success, 1 detection failure, 2 input error, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from core.benchmark import SCENARIOS, run_benchmark, scenario
from core.config import RunCfg, load_config, override
from core.diffik import PlacementTarget
from core.errors import InputError, InvariantViolation, PickPlaceError
from core.fileio import (
    load_trajectory,
    placement_from_json,
    placement_to_json,
    read_grasps,
    read_scene,
    read_scene_volumes,
    volume_paths,
    write_cloud,
    write_grasps,
    write_scene,
    write_scene_volumes,
    write_trajectory,
    write_trajectory_binary,
)
from core.harness import DetectionTask, bake_volumes, detect, scene_grasps, target_selection
from core.kinematics import load_chain
from core.synth import blocked_high_bin_scene, rack_fixtures
from core.trajectory import audit_trajectory
from core.workcell import Workcell
from reporting.plots import export_plots
from reporting.summary import format_benchmark, format_run

log = logging.getLogger("pickplace")

BLOCKED_HIGH_BIN = "blocked-high-bin"


# ----------------------- Parser -----------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pickplace", description="Pick-and-place planning with denoised grasp/place poses.")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--chain", help="chain description (default: bundled tabletop7)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-scene", help="synthesize a scene manifest")
    s.add_argument("--scenario", default="easy", choices=[*SCENARIOS, BLOCKED_HIGH_BIN])
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="scene manifest path")

    s = sub.add_parser("gen-grasps", help="grasps for every object in a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("bake-volumes", help="TSDF and decoder volumes for the scene target")
    s.add_argument("--scene", required=True)
    s.add_argument("--grasps")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("detect", help="plan one pick-and-place")
    s.add_argument("--scene", required=True)
    s.add_argument("--grasps")
    s.add_argument("--volumes", help="directory written by bake-volumes")
    s.add_argument("--method", default="ours", choices=["ours", "baseline"])
    s.add_argument("--guidance", choices=["oracle", "external"])
    s.add_argument("--guidance-command", help="command that starts an external field server")
    s.add_argument("--bin-order", help="comma-separated, e.g. high,mid,low")
    s.add_argument("--seed", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--binary", action="store_true", help="also write the binary trajectory")
    s.add_argument("--out", help="output directory")

    s = sub.add_parser("bench", help="run the scenario benchmark")
    s.add_argument("--scenario", action="append", choices=list(SCENARIOS))
    s.add_argument("--method", action="append", choices=["ours", "baseline"])
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory")

    s = sub.add_parser("audit", help="re-validate a trajectory file")
    s.add_argument("trajectory")
    s.add_argument("--scene", required=True)

    s = sub.add_parser("export-plots", help="SVG figures from benchmark CSVs")
    s.add_argument("--bench-dir", required=True)
    s.add_argument("--out")
    return p


# ----------------------- Helpers -----------------------
def _target_and_placement(doc: dict, scene) -> tuple[int, PlacementTarget]:
    if "placement" not in doc:
        raise InputError("scene manifest has no placement target (write it with gen-scene)")
    tid = int(doc["target_id"]) if doc.get("target_id") is not None else target_selection(scene)
    return tid, placement_from_json(doc["placement"])


def _task(args, cfg: RunCfg, chain) -> tuple[DetectionTask, Optional[dict]]:
    scene, doc = read_scene(args.scene)
    tid, placement = _target_and_placement(doc, scene)
    grasps = read_grasps(args.grasps) if args.grasps else None
    task = DetectionTask.prepare(scene, placement, chain, cfg.contact.grasp_clearance, tid, grasps)
    files = None
    if getattr(args, "volumes", None):
        task = replace(task, volumes=read_scene_volumes(args.volumes))
        files = volume_paths(args.volumes)
    return task, files


def _stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")


# ----------------------- Commands -----------------------
def cmd_gen_scene(args, cfg: RunCfg, chain) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    if args.scenario == BLOCKED_HIGH_BIN:
        sc = SCENARIOS["easy"]
        scene = replace(blocked_high_bin_scene(sc.pick_center, fixtures=rack_fixtures(sc.rack_center)), seed=seed)
        tid = 0
    else:
        sc = scenario(args.scenario)
        scene = sc.build_scene(seed)
        tid = target_selection(scene)
    placement = sc.placement_for(scene.object(tid))
    write_scene(scene, args.out, {"scenario": args.scenario, "target_id": tid, "placement": placement_to_json(placement)})
    print(f"✅ Scene {args.scenario} (seed {seed}): {len(scene.objects)} objects, target {tid} -> {args.out}")
    return 0


def cmd_gen_grasps(args, cfg: RunCfg, chain) -> int:
    scene, _ = read_scene(args.scene)
    grasps = scene_grasps(scene, chain, cfg.contact.grasp_clearance)
    write_grasps(grasps, args.out)
    print(f"✅ {len(grasps)} grasps -> {args.out}")
    return 0


def cmd_bake_volumes(args, cfg: RunCfg, chain) -> int:
    scene, doc = read_scene(args.scene)
    tid = int(doc["target_id"]) if doc.get("target_id") is not None else target_selection(scene)
    grasps = read_grasps(args.grasps) if args.grasps else scene_grasps(scene, chain, cfg.contact.grasp_clearance)
    volumes = bake_volumes(scene, tid, [g for g in grasps if g.object_id == tid])
    paths = write_scene_volumes(volumes, args.out)
    write_cloud(scene.object(tid).surface_points(), Path(args.out) / "target.cloud")
    print(f"✅ {len(paths)} volumes for target {tid} -> {args.out}")
    return 0


def cmd_detect(args, cfg: RunCfg, chain) -> int:
    cfg = override(
        cfg,
        seed=args.seed,
        out=args.out,
        guidance=args.guidance,
        guidance_command=args.guidance_command,
        bin_order=tuple(b.strip() for b in args.bin_order.split(",")) if args.bin_order else None,
    )
    cfg = override(cfg, "denoise", batch=args.batch, steps=args.steps)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    task, files = _task(args, cfg, chain)
    if args.method == "ours" and cfg.guidance == "external" and files is None:
        files = write_scene_volumes(task.volumes, out / "volumes")
    print(f"[{_stamp()}] 🚀 detect ({args.method}, seed {cfg.seed}, target {task.target_id})…")
    kwargs = {}
    if args.method == "ours":
        kwargs = {"volume_files": files, "log_path": out / "run_log.jsonl" if cfg.run_log else None}
    solution, metrics = detect(task, args.method, cfg, **kwargs)
    report = format_run(metrics, solution)
    (out / "summary.txt").write_text(report + "\n")
    if solution is None:
        print(report)
        print(f"❌ Detection failed: {metrics.reason}")
        return 1
    extra = {"target_id": task.target_id, "method": args.method, "seed": cfg.seed}
    write_trajectory(solution, out / "trajectory.txt", extra)
    if args.binary:
        write_trajectory_binary(solution, out / "trajectory.bin", extra)
    print(report)
    print(f"✅ Done. {len(solution.trajectory)} samples, pick={metrics.pick_attempts}, place={metrics.place_attempts}")
    return 0


def cmd_bench(args, cfg: RunCfg, chain) -> int:
    cfg = override(cfg, seed=args.seed, out=args.out)
    cfg = override(
        cfg,
        "bench",
        trials=args.trials,
        scenarios=tuple(args.scenario) if args.scenario else None,
        methods=tuple(args.method) if args.method else None,
    )
    b = cfg.bench
    print(f"[{_stamp()}] 🚀 bench {list(b.scenarios)} x {list(b.methods)}, {b.trials} trials…")
    result = run_benchmark(b.scenarios, b.trials, b.methods, chain, cfg)
    paths = result.write(cfg.out)
    report = format_benchmark(result.aggregate)
    (Path(cfg.out) / "bench_summary.txt").write_text(report + "\n")
    print(report)
    violations = int(result.trials["audit_violations"].sum()) if not result.trials.empty else 0
    print(f"✅ Done. {len(result.trials)} detections -> {paths['trials']} (audit rejections: {violations})")
    return 0


def cmd_audit(args, cfg: RunCfg, chain) -> int:
    solution, header = load_trajectory(args.trajectory)
    scene, doc = read_scene(args.scene)
    tid = int(header.get("target_id", doc.get("target_id", target_selection(scene))))
    placement = placement_from_json(doc["placement"]) if "placement" in doc else None
    support = placement.support if placement is not None else "rack"
    if solution.trajectory.chain_name != chain.name:
        raise InputError(f"trajectory was planned for chain {solution.trajectory.chain_name!r}, not {chain.name!r}")
    wc = Workcell(chain, scene, tid, support, cfg.contact.held_radius, cfg.contact.held_points)
    report = audit_trajectory(
        solution.trajectory, wc, solution.in_hand, solution.schedule, solution.place_in_hand, cfg.trajectory
    )
    if not report.ok:
        for v in report.violations[:20]:
            print(f"- {v}")
        raise InvariantViolation(f"{len(report.violations)} audit violations in {report.samples} samples")
    print(f"✅ Audit passed: {report.samples} samples")
    return 0


def cmd_export_plots(args, cfg: RunCfg, chain) -> int:
    paths = export_plots(args.bench_dir, args.out)
    print(f"✅ {len(paths)} figures")
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "gen-grasps": cmd_gen_grasps,
    "bake-volumes": cmd_bake_volumes,
    "detect": cmd_detect,
    "bench": cmd_bench,
    "audit": cmd_audit,
    "export-plots": cmd_export_plots,
}


# ----------------------- App entrypoint -----------------------
def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = override(cfg, chain=args.chain)
        chain = load_chain(cfg.chain)
        return COMMANDS[args.command](args, cfg, chain)
    except PickPlaceError as e:
        log.error("%s", e)
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
