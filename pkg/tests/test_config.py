# tests/test_config.py
from dataclasses import replace
from pathlib import Path

import pytest

from core.config import ContactCfg, DenoiseCfg, RunCfg, from_dict, load_config, override
from core.diffik import StepContext
from core.errors import InputError
from core.guidance import NoiseSchedule

ROOT = Path(__file__).resolve().parents[1]


def test_defaults():
    cfg = load_config(environ={})
    assert cfg == RunCfg()
    assert cfg.contact.threshold == 0.05
    assert cfg.contact.grasp_clearance == 0.02
    assert (cfg.denoise.sigma_angular, cfg.denoise.sigma_linear) == (0.3, 0.1)
    assert cfg.denoise.steps == 100
    assert cfg.bin_order == ("high", "mid", "low")
    assert cfg.bench.scenarios == ("easy", "far-pick", "obstructed-place")


def test_schedule_defaults_match_run_defaults():
    s = NoiseSchedule(100)
    assert (s.sigma_angular, s.sigma_linear) == (0.3, 0.1)
    assert s.sigma(100) == (0.3, 0.1)
    d = DenoiseCfg()
    assert (d.sigma_angular, d.sigma_linear) == (s.sigma_angular, s.sigma_linear)
    assert StepContext.threshold == ContactCfg().threshold


def test_close_contact_override_only_touches_contact_and_noise():
    cfg = load_config(ROOT / "data" / "close_contact.yaml", environ={})
    assert cfg.contact.threshold == 0.02
    assert (cfg.denoise.sigma_angular, cfg.denoise.sigma_linear) == (0.05, 0.01)
    assert replace(cfg, contact=ContactCfg(), denoise=DenoiseCfg()) == RunCfg()


def test_bundled_default_file_matches_dataclass_defaults():
    assert load_config(ROOT / "data" / "default_config.yaml", environ={}) == RunCfg()


def test_yaml_layer(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "seed: 9\n"
        "bin_order: [mid, low]\n"
        "denoise:\n"
        "  batch: 2\n"
        "  dt: 1\n"
        "  init_height: [0.2, 0.3]\n"
        "  sort_by_score: false\n"
    )
    cfg = load_config(path, environ={})
    assert cfg.seed == 9
    assert cfg.bin_order == ("mid", "low")
    assert cfg.denoise.batch == 2
    assert isinstance(cfg.denoise.dt, float)
    assert cfg.denoise.init_height == (0.2, 0.3)
    assert cfg.denoise.sort_by_score is False
    assert cfg.denoise.steps == 100


@pytest.mark.parametrize(
    "doc",
    [
        {"sede": 1},
        {"denoise": {"batchsize": 2}},
        {"denoise": {"stabilization": "yes"}},
        {"prm": [1, 2]},
    ],
)
def test_bad_keys_are_input_errors(doc):
    with pytest.raises(InputError):
        from_dict(doc)


def test_unreadable_or_malformed_file(tmp_path):
    with pytest.raises(InputError):
        load_config(tmp_path / "missing.yaml", environ={})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(InputError):
        load_config(bad, environ={})


def test_environment_beats_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 9\ndenoise:\n  batch: 2\n")
    cfg = load_config(path, environ={"PICKPLACE_SEED": "4", "PICKPLACE_BATCH": "8", "PICKPLACE_OUT": ""})
    assert cfg.seed == 4
    assert cfg.denoise.batch == 8
    assert cfg.out == "out"
    with pytest.raises(InputError):
        load_config(environ={"PICKPLACE_STEPS": "many"})


def test_override_skips_unset_flags():
    cfg = RunCfg()
    assert override(cfg, seed=None, out=None) is cfg
    cfg2 = override(cfg, "denoise", batch=3, steps=None)
    assert cfg2.denoise.batch == 3
    assert cfg2.denoise.steps == cfg.denoise.steps
    assert override(cfg, seed=5).seed == 5
