# tests/test_fileio.py
import numpy as np
import pytest

from core.collision import cloud_body, sphere_body
from core.diffik import PlacementTarget
from core.errors import InputError
from core.fileio import (
    load_trajectory,
    placement_from_json,
    placement_to_json,
    read_cloud,
    read_environment,
    read_grasps,
    read_scene,
    read_scene_volumes,
    read_trajectory,
    read_trajectory_binary,
    read_volume,
    write_cloud,
    write_environment,
    write_grasps,
    write_scene,
    write_scene_volumes,
    write_trajectory,
    write_trajectory_binary,
    write_volume,
)
from core.harness import bake_volumes, scene_grasps
from core.kinematics import forward_kinematics
from core.scene import GraspCandidate, GridSpec, VoxelVolume
from core.se3 import Pose, exp_so3
from core.synth import upright_pose
from core.trajectory import PHASE_ORDER, JointTrajectory, PickPlaceSolution, WaypointSchedule


@pytest.fixture
def solution(chain, rng):
    parts = [(phase, [chain.clip(chain.home + rng.uniform(-0.01, 0.01, chain.n)) for _ in range(3)]) for phase in PHASE_ORDER]
    traj = JointTrajectory.from_parts(chain, parts, (0.005, 0.02))
    hT_a = forward_kinematics(chain, traj.configs[0])
    hT_b = forward_kinematics(chain, traj.configs[-1])
    schedule = WaypointSchedule.build(hT_a, hT_b)
    return PickPlaceSolution(True, traj, schedule, Pose(exp_so3(np.array([0.1, -0.2, 0.3])), (0.0, 0.001, 0.03)))


def _same_solution(a, b):
    assert np.array_equal(a.trajectory.configs, b.trajectory.configs)
    assert a.trajectory.phases == b.trajectory.phases
    assert a.trajectory.chain_name == b.trajectory.chain_name
    assert np.array_equal(a.in_hand.as_matrix(), b.in_hand.as_matrix())
    for side in ("pick", "place"):
        for name in ("entry", "approach", "grasp", "lift"):
            pa = getattr(getattr(a.schedule, side), name)
            pb = getattr(getattr(b.schedule, side), name)
            assert np.array_equal(pa.as_matrix(), pb.as_matrix())


def test_text_trajectory_is_exact(solution, tmp_path):
    path = tmp_path / "trajectory.txt"
    write_trajectory(solution, path, {"target_id": 3, "method": "ours"})
    back, header = read_trajectory(path)
    _same_solution(solution, back)
    assert header["target_id"] == 3
    assert header["samples"] == len(PHASE_ORDER) * 3
    assert back.place_in_hand is None
    text = path.read_text().splitlines()
    assert text[0] == "# pickplace-trajectory v1"
    columns = next(l for l in text if not l.startswith("#")).split(",")
    assert columns[:3] == ["index", "phase", "q0"]
    assert columns[-6:] == ["x", "y", "z", "rx", "ry", "rz"]


def test_binary_trajectory_is_exact(solution, tmp_path):
    path = tmp_path / "trajectory.bin"
    write_trajectory_binary(solution, path, {"seed": 7})
    back, header = read_trajectory_binary(path)
    _same_solution(solution, back)
    assert header["seed"] == 7
    via_load, _ = load_trajectory(path)
    _same_solution(solution, via_load)


def test_load_trajectory_dispatches_on_first_line(solution, tmp_path):
    path = tmp_path / "t.txt"
    write_trajectory(solution, path)
    back, _ = load_trajectory(path)
    _same_solution(solution, back)
    other = tmp_path / "other.txt"
    other.write_text("hello\n")
    with pytest.raises(InputError):
        load_trajectory(other)
    with pytest.raises(InputError):
        load_trajectory(tmp_path / "missing.bin")


def test_truncated_binary_trajectory(solution, tmp_path):
    path = tmp_path / "t.bin"
    write_trajectory_binary(solution, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(InputError):
        read_trajectory_binary(path)


def test_failed_solutions_are_not_exported(solution, tmp_path):
    failed = PickPlaceSolution(False, None, solution.schedule, solution.in_hand)
    with pytest.raises(InputError):
        write_trajectory(failed, tmp_path / "x.txt")
    with pytest.raises(InputError):
        write_trajectory_binary(failed, tmp_path / "x.bin")


def test_volume_files(tmp_path):
    grid = GridSpec(4, (0.1, -0.2, 0.0), 0.025)
    values = np.linspace(-1.0, 1.0, 64)
    write_volume(VoxelVolume(grid, values, "tsdf_full"), tmp_path / "a.vol")
    back = read_volume(tmp_path / "a.vol")
    assert back.grid.same_as(grid)
    assert back.semantics == "tsdf_full"
    assert np.array_equal(back.values.ravel(), values.astype(np.float32).astype(float))
    (tmp_path / "b.vol").write_bytes(b"something else\n")
    with pytest.raises(InputError):
        read_volume(tmp_path / "b.vol")


def test_scene_volumes_directory(single_box_scene, chain, tmp_path):
    grasps = [g for g in scene_grasps(single_box_scene, chain) if g.object_id == 0]
    volumes = bake_volumes(single_box_scene, 0, grasps)
    paths = write_scene_volumes(volumes, tmp_path / "vol")
    assert sorted(paths) == ["grasp_validity", "gravity_score", "tsdf_full", "tsdf_object"]
    back = read_scene_volumes(tmp_path / "vol")
    assert back.grid.same_as(volumes.grid)
    assert np.allclose(back.gravity_score.values, volumes.gravity_score.values, rtol=1e-6)
    assert (tmp_path / "vol" / "volumes.json").exists()


def test_cloud_files(tmp_path, rng):
    pts = rng.normal(size=(10, 3))
    write_cloud(pts, tmp_path / "c.cloud")
    assert np.allclose(read_cloud(tmp_path / "c.cloud"), pts, atol=1e-6)
    (tmp_path / "c.cloud").write_bytes((tmp_path / "c.cloud").read_bytes()[:-4])
    with pytest.raises(InputError):
        read_cloud(tmp_path / "c.cloud")


def test_grasp_file_round_trip(tmp_path):
    g = GraspCandidate(Pose(exp_so3(np.array([np.pi, 0.1, 0.0])), (0.5, 0.01, 0.04)), 33.3, 0.05, 2)
    write_grasps([g], tmp_path / "g.json")
    (back,) = read_grasps(tmp_path / "g.json")
    assert np.array_equal(back.pose.as_matrix(), g.pose.as_matrix())
    assert (back.score, back.width, back.object_id, back.bin) == (g.score, g.width, g.object_id, g.bin)


def test_scene_manifest_round_trip(single_box_scene, tmp_path):
    placement = PlacementTarget.upright(upright_pose(0.45, 0.4, 0.03, base_z=0.05), support="rack")
    write_scene(single_box_scene, tmp_path / "s.json", {"target_id": 0, "placement": placement_to_json(placement)})
    scene, doc = read_scene(tmp_path / "s.json")
    assert doc["target_id"] == 0
    assert [o.id for o in scene.objects] == [0]
    assert np.array_equal(scene.object(0).half_extents, single_box_scene.object(0).half_extents)
    assert [f.name for f in scene.fixtures] == ["rack"]
    p = placement_from_json(doc["placement"])
    assert p.free_yaw and p.support == "rack"
    assert np.array_equal(p.weights, placement.weights)

    (tmp_path / "old.json").write_text('{"format_version": 0, "objects": []}')
    with pytest.raises(InputError):
        read_scene(tmp_path / "old.json")


def test_environment_with_cloud_reference(tmp_path, rng):
    bodies = [sphere_body("ball", (0.1, 0.2, 0.3), 0.05), cloud_body("blob", rng.normal(size=(5, 3)))]
    write_environment(bodies, tmp_path / "env.json")
    assert (tmp_path / "blob.cloud").exists()
    ball, blob = read_environment(tmp_path / "env.json")
    assert ball.kind == "sphere" and ball.radius == 0.05
    assert blob.points.shape == (5, 3)


def test_bad_placement_record():
    with pytest.raises(InputError):
        placement_from_json({"free_yaw": True})
