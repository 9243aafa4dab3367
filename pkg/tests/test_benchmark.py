# tests/test_benchmark.py
import numpy as np
import pandas as pd
import pytest

from core.benchmark import SCENARIOS, BenchmarkResult, aggregate, histogram, run_benchmark, scenario
from core.config import override
from core.errors import InputError
from core.synth import RACK_HALF_EXTENTS


def _trials():
    rows = []
    for method, times in (("ours", [1.0, 2.0, 3.0, 4.0]), ("baseline", [2.0, 4.0, 6.0, 8.0])):
        for i, t in enumerate(times):
            rows.append(
                {
                    "scenario": "easy",
                    "method": method,
                    "success": i != 3,
                    "detection_time": t,
                    "trajectory_ik_time": t / 2,
                    "pick_attempts": i + 1,
                    "place_attempts": 2 * (i + 1),
                    "placement_error_m": 0.0,
                    "audit_violations": 0,
                }
            )
    return pd.DataFrame(rows)


def test_scenario_lookup():
    assert set(SCENARIOS) == {"easy", "far-pick", "obstructed-place"}
    assert scenario("easy").wall_gap is None
    assert scenario("obstructed-place").wall_gap == 0.16
    with pytest.raises(InputError):
        scenario("cluttered")


def test_scenes_are_seeded():
    sc = scenario("far-pick")
    a, b = sc.build_scene(11), sc.build_scene(11)
    assert [o.id for o in a.objects] == [o.id for o in b.objects]
    for x, y in zip(a.objects, b.objects):
        assert np.array_equal(x.pose.as_matrix(), y.pose.as_matrix())
    assert 1 <= len(a.objects) <= 5
    for o in a.objects:
        assert np.all(np.abs(o.centroid[:2] - sc.pick_center) <= sc.region_size / 2)


def test_obstructed_scenario_has_walls():
    names = [f.name for f in scenario("obstructed-place").build_scene(0).fixtures]
    assert names == ["rack", "wall0", "wall1"]


def test_placement_sits_on_the_rack():
    sc = scenario("easy")
    obj = sc.build_scene(0).objects[0]
    target = sc.placement_for(obj)
    assert target.free_yaw and target.support == "rack"
    p = target.poses[0].translation
    assert np.allclose(p[:2], sc.rack_center)
    assert np.isclose(p[2], 2 * RACK_HALF_EXTENTS[2] + obj.half_height)


def test_aggregate_statistics():
    table = aggregate(_trials())
    assert list(table["method"]) == ["ours", "baseline"]
    ours = table.iloc[0]
    assert ours["detections"] == 4
    assert ours["success_rate"] == 0.75
    assert ours["time_median"] == 2.5
    assert ours["time_iqr"] == pytest.approx(1.5)
    assert ours["pick_attempts_mean"] == 2.5
    assert ours["place_attempts_median"] == 5.0
    assert table.iloc[1]["time_median"] == 5.0
    assert aggregate(pd.DataFrame()).empty


def test_histogram_shares_edges():
    h = histogram(_trials(), bins=4)
    assert len(h) == 8
    for _, part in h.groupby("method"):
        assert list(part["bin_lo"]) == [0.0, 2.0, 4.0, 6.0]
        assert part["count"].sum() == 4
    ours = h[h["method"] == "ours"]
    assert list(ours["count"]) == [1, 2, 1, 0]
    assert list(histogram(pd.DataFrame()).columns) == ["scenario", "method", "bin_lo", "bin_hi", "count"]


def test_result_files(tmp_path):
    df = _trials()
    paths = BenchmarkResult(df, aggregate(df), histogram(df)).write(tmp_path / "bench")
    assert sorted(paths) == ["aggregate", "histogram", "trials"]
    back = pd.read_csv(paths["trials"])
    assert len(back) == len(df)


def test_benchmark_arguments(chain):
    with pytest.raises(InputError):
        run_benchmark(["easy"], 0, ["baseline"], chain)
    with pytest.raises(InputError):
        run_benchmark(["easy"], 2, ["baseline"], chain, seeds=[1])
    with pytest.raises(InputError):
        run_benchmark(["nowhere"], 1, ["baseline"], chain)


@pytest.mark.slow
def test_baseline_benchmark_runs(chain, close_cfg):
    cfg = override(close_cfg, "bench", max_detections_per_scene=1)
    result = run_benchmark(["easy"], 2, ["baseline"], chain, cfg)
    assert len(result.trials) == 2
    assert set(result.trials["scenario"]) == {"easy"}
    assert result.trials["audit_violations"].sum() == 0
    assert len(result.aggregate) == 1
