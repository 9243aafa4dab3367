# tests/test_scene.py
import numpy as np
import pytest

from core.errors import InputError
from core.scene import (
    FALLBACK_ORDER,
    GraspCandidate,
    GridSpec,
    SceneVolumes,
    ScoreBin,
    VoxelVolume,
    bake_decoder_volumes,
    depth_to_tsdf,
    grid_spec_for_region,
    lookup_trilinear,
    score_to_bin,
    validity_falloff,
)
from core.se3 import Pose


@pytest.mark.parametrize(
    "score, expected",
    [
        (0.0, ScoreBin.LOW),
        (14.9, ScoreBin.LOW),
        (15.0, ScoreBin.MID),
        (30.0, ScoreBin.MID),
        (30.1, ScoreBin.HIGH),
        (45.0, ScoreBin.HIGH),
    ],
)
def test_score_to_bin_edges(score, expected):
    assert score_to_bin(score) is expected


@pytest.mark.parametrize("bad", [-0.1, float("nan"), float("inf")])
def test_score_to_bin_rejects_bad_scores(bad):
    with pytest.raises(InputError):
        score_to_bin(bad)


def test_one_hot_and_parse():
    for b in ScoreBin:
        assert ScoreBin.from_one_hot(b.one_hot) is b
        assert ScoreBin.parse(f" {b.label.upper()} ") is b
    assert FALLBACK_ORDER == (ScoreBin.HIGH, ScoreBin.MID, ScoreBin.LOW)
    with pytest.raises(InputError):
        ScoreBin.parse("medium")
    with pytest.raises(InputError):
        ScoreBin.from_one_hot([0.5, 0.5, 0.0])


def test_grasp_candidate_derives_bin():
    g = GraspCandidate(Pose.identity(), 22.0, 0.05)
    assert g.bin is ScoreBin.MID
    with pytest.raises(InputError):
        GraspCandidate(Pose.identity(), 22.0, 0.0)


def test_grid_centers():
    grid = GridSpec(4, (1.0, 2.0, 3.0), 0.5)
    c = grid.centers()
    assert c.shape == (4, 4, 4, 3)
    assert np.allclose(c[0, 0, 0], [1.25, 2.25, 3.25])
    assert np.allclose(c[3, 1, 2], [2.75, 2.75, 4.25])
    assert grid.extent == pytest.approx(2.0)

    region = grid_spec_for_region((0.5, 0.0), extent=0.3, resolution=40)
    assert np.allclose(region.origin, [0.35, -0.15, 0.0])
    assert region.voxel_size == pytest.approx(0.0075)
    with pytest.raises(InputError):
        GridSpec(1, (0, 0, 0), 0.1)
    with pytest.raises(InputError):
        GridSpec(4, (0, 0, 0), 0.0)


def test_trilinear_lookup_is_exact_for_linear_fields():
    grid = GridSpec(6, (0.0, 0.0, 0.0), 0.1)
    c = grid.centers()
    values = 2.0 * c[..., 0] - c[..., 1] + 0.5 * c[..., 2]
    vol = VoxelVolume(grid, values)
    for p in ([0.22, 0.31, 0.47], [0.05, 0.55, 0.12]):
        v, oob = lookup_trilinear(vol, p)
        assert not oob
        assert v == pytest.approx(2.0 * p[0] - p[1] + 0.5 * p[2], abs=1e-12)

    _, oob = lookup_trilinear(vol, [0.3, 0.3, 0.7])
    assert oob


def test_volume_validation():
    grid = GridSpec(3, (0, 0, 0), 0.1)
    with pytest.raises(InputError):
        VoxelVolume(grid, np.zeros(26))
    ok = VoxelVolume(grid, np.zeros(27))
    other = VoxelVolume(GridSpec(3, (0.1, 0, 0), 0.1), np.zeros(27))
    with pytest.raises(InputError):
        SceneVolumes(ok, other, ok, ok)
    with pytest.raises(InputError):
        SceneVolumes(ok, ok, VoxelVolume(grid, np.full(27, 1.5)), ok)


def test_tsdf_from_rendered_box(single_box_scene):
    scene = single_box_scene
    depth, labels = scene.render()
    assert (labels == 0).any()
    grid = scene.grid()
    result = depth_to_tsdf(depth, scene.camera, grid)
    assert not result.all_invalid
    V = result.volume.values
    # voxel (19, 20) lies over the box centre; the box spans z in [0, 0.06]
    above = V[19, 20, 13]      # z ~ 0.10
    inside = V[19, 20, 3]      # z ~ 0.026
    assert above == pytest.approx(1.0)
    assert inside == pytest.approx(-1.0)
    assert V.min() >= -1.0 and V.max() <= 1.0


def test_tsdf_with_empty_mask_is_all_free(single_box_scene):
    scene = single_box_scene
    depth, labels = scene.render()
    result = depth_to_tsdf(depth, scene.camera, scene.grid(), mask=labels == 7, semantics="tsdf_object")
    assert result.all_invalid
    assert np.all(result.volume.values == 1.0)
    assert result.volume.semantics == "tsdf_object"


def test_tsdf_rejects_wrong_image_shape(single_box_scene):
    with pytest.raises(InputError):
        depth_to_tsdf(np.ones((3, 3)), single_box_scene.camera, single_box_scene.grid())


def test_validity_falloff_profile():
    w = validity_falloff(np.array([0.0, 1.0, 2.0, 3.0, 5.0]))
    assert np.allclose(w, [1.0, 1.0, 0.5, 0.0, 0.0])


def test_bake_decoder_volumes():
    grid = GridSpec(20, (0.0, 0.0, 0.0), 0.01)
    centre = grid.centers()[10, 10, 10]
    g = GraspCandidate(Pose.from_translation(centre), 35.0, 0.05)
    validity, score = bake_decoder_volumes([g], grid)
    assert validity.semantics == "grasp_validity"
    assert score.semantics == "gravity_score"
    assert validity.values[10, 10, 10] == pytest.approx(1.0)
    assert score.values[10, 10, 10] == pytest.approx(35.0)
    assert validity.values[0, 0, 0] == 0.0
    assert score.values[0, 0, 0] == 0.0
    assert validity.values.max() <= 1.0
