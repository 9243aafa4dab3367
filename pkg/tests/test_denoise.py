# tests/test_denoise.py
import json
from dataclasses import replace

import numpy as np
import pytest

from core.config import DenoiseCfg
from core.denoise import Candidate, DenoiseResult, DenoiseState, initialize, run, validate_result
from core.diffik import ConfigStack, PlacementTarget
from core.errors import InputError
from core.guidance import NoiseSchedule, OracleField
from core.harness import scene_grasps
from core.scene import SceneVolumes, ScoreBin, VoxelVolume
from core.se3 import Pose
from core.synth import upright_pose
from core.workcell import Workcell

CLOSE = 0.02
SCHEDULE = NoiseSchedule(steps=4, sigma_angular=0.05, sigma_linear=0.01)
CFG = DenoiseCfg(steps=4, batch=2)


@pytest.fixture(scope="module")
def workcell(chain, single_box_scene):
    return Workcell(chain, single_box_scene, 0)


@pytest.fixture(scope="module")
def grasps(chain, single_box_scene):
    return [g for g in scene_grasps(single_box_scene, chain) if g.object_id == 0]


@pytest.fixture(scope="module")
def placement():
    return PlacementTarget.upright(upright_pose(0.45, 0.4, 0.03, base_z=0.05), support="rack")


def _zero_validity(scene):
    grid = scene.grid()
    zeros = VoxelVolume(grid, np.zeros(grid.resolution**3), "grasp_validity")
    tsdf = VoxelVolume(grid, np.ones(grid.resolution**3), "tsdf_full")
    return SceneVolumes(tsdf, tsdf, zeros, zeros)


def test_initialize_is_seeded_and_collision_free(workcell):
    a = initialize(workcell, None, 2, seed=3, cfg=CFG)
    b = initialize(workcell, None, 2, seed=3, cfg=CFG)
    assert [s.stream for s in a] == [0, 1]
    for x, y in zip(a, b):
        assert np.array_equal(x.stack.vector(), y.stack.vector())
        assert x.k == CFG.steps
    with pytest.raises(InputError):
        initialize(workcell, None, 0, seed=3, cfg=CFG)


def test_pick_only_denoising_keeps_every_step_feasible(workcell, grasps, tmp_path):
    states = initialize(workcell, None, 2, seed=1, cfg=CFG)
    field = OracleField(grasps, SCHEDULE, seed=1)
    log_path = tmp_path / "run_log.jsonl"
    result = run(states, field, workcell, None, SCHEDULE, cfg=CFG, threshold=CLOSE, seed=1, log_path=log_path)
    assert result.ok
    assert result.bin_used is ScoreBin.HIGH
    assert len(result.candidates) == 2
    records = [json.loads(l) for l in log_path.read_text().splitlines()]
    assert len(records) == 2 * SCHEDULE.steps
    assert [r["k"] for r in records[:4]] == [3, 2, 1, 0]
    for r in records:
        assert r["within_limits"]
        assert r["min_clearance"] >= 0.0
        assert r["bin"] == "high"
    # only the grasp config moves
    for c in result.candidates:
        init = next(s for s in states if s.stream == c.state.stream)
        assert np.array_equal(c.state.stack.q_beta, init.stack.q_beta)
    assert validate_result(result, workcell, None).ok


def test_pick_place_denoising_passes_validation(workcell, grasps, placement):
    states = initialize(workcell, placement, 2, seed=2, cfg=CFG)
    field = OracleField(grasps, SCHEDULE, seed=2)
    result = run(states, field, workcell, placement, SCHEDULE, cfg=CFG, threshold=CLOSE, seed=2)
    assert result.ok
    for c in result.candidates:
        assert c.state.oT_beta is not None
        assert len(c.diagnostics) == SCHEDULE.steps
    report = validate_result(result, workcell, placement, CFG)
    assert report.checked == len(result.candidates)
    assert report.count("limits") == 0
    assert report.count("clearance") == 0


def test_repeated_runs_append_to_the_run_log(workcell, grasps, tmp_path):
    cfg = DenoiseCfg(steps=4, batch=1)
    states = initialize(workcell, None, 1, seed=6, cfg=cfg)
    log_path = tmp_path / "run_log.jsonl"
    for _ in range(2):
        run(states, OracleField(grasps, SCHEDULE, seed=6), workcell, None, SCHEDULE, cfg=cfg, bins=[ScoreBin.HIGH], threshold=CLOSE, log_path=log_path)
    records = [json.loads(l) for l in log_path.read_text().splitlines()]
    assert len(records) == 2 * SCHEDULE.steps
    assert [r["k"] for r in records] == [3, 2, 1, 0] * 2


def test_exhausted_bin_falls_back(workcell, grasps):
    states = initialize(workcell, None, 1, seed=0, cfg=CFG)
    field = OracleField([g for g in grasps if g.bin is not ScoreBin.HIGH], SCHEDULE)
    result = run(states, field, workcell, None, SCHEDULE, cfg=CFG, threshold=CLOSE)
    assert result.logs[0] == "bin high: nothing to attract toward"
    if result.ok:
        assert result.bin_used in (ScoreBin.MID, ScoreBin.LOW)


def test_no_grasps_exhausts_every_bin(workcell):
    states = initialize(workcell, None, 1, seed=0, cfg=CFG)
    result = run(states, OracleField([], SCHEDULE), workcell, None, SCHEDULE, cfg=CFG)
    assert not result.ok
    assert result.reason == "all bins exhausted"
    assert len(result.logs) == 3


def test_validity_filter_and_its_ablation(workcell, grasps, single_box_scene):
    volumes = _zero_validity(single_box_scene)
    states = initialize(workcell, None, 2, seed=4, cfg=CFG)
    field = OracleField(grasps, SCHEDULE, seed=4)
    filtered = run(states, field, workcell, None, SCHEDULE, volumes, CFG, bins=[ScoreBin.HIGH], threshold=CLOSE)
    assert not filtered.ok
    assert filtered.logs == ["bin high: no candidate passed the validity filter"]

    open_cfg = DenoiseCfg(steps=4, batch=2, use_validity_filter=False, sort_by_score=False)
    kept = run(states, OracleField(grasps, SCHEDULE, seed=4), workcell, None, SCHEDULE, volumes, open_cfg, bins=[ScoreBin.HIGH], threshold=CLOSE)
    assert sorted(c.state.stream for c in kept.candidates) == [0, 1]


def test_unconditioned_run_reports_no_bin(workcell, grasps):
    states = initialize(workcell, None, 1, seed=0, cfg=CFG)
    cfg = DenoiseCfg(steps=4, batch=1, condition_on_bin=False)
    result = run(states, OracleField(grasps, SCHEDULE), workcell, None, SCHEDULE, cfg=cfg, threshold=CLOSE)
    assert result.ok
    assert result.bin_used is None


def test_run_needs_states(workcell, grasps):
    with pytest.raises(InputError):
        run([], OracleField(grasps, SCHEDULE), workcell, None, SCHEDULE)


def test_validation_flags_limit_violations(workcell, chain):
    q = chain.home.copy()
    q[3] = chain.q_max[3] + 0.1
    state = DenoiseState.at(chain, ConfigStack.from_pair(q, chain.home), 0, 0, None)
    report = validate_result(DenoiseResult([Candidate(state, 1.0, 40.0)], ScoreBin.HIGH), workcell)
    assert not report.ok
    assert report.count("limits") >= 1
    assert report.violations[0].config == "q_alpha"


def test_validation_flags_an_object_pose_off_the_hands(workcell, chain, placement):
    state = DenoiseState.at(chain, ConfigStack.from_pair(chain.home, chain.home), 0, 0, workcell.target.pose)
    report = validate_result(DenoiseResult([Candidate(state, 1.0, 40.0)], ScoreBin.HIGH), workcell, placement)
    assert report.count("consistency") == 0
    p = state.oT_beta
    moved = replace(state, oT_beta=Pose(p.rotation, p.translation + [0.0, 0.0, 0.005]))
    report = validate_result(DenoiseResult([Candidate(moved, 1.0, 40.0)], ScoreBin.HIGH), workcell, placement)
    assert report.count("consistency") == 1
