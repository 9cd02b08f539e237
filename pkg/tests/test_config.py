import json

import pytest

from hotet import config


def test_full_scale_defaults():
    cfg = config.resolve()
    assert cfg["train"]["lr"] == 1e-3 and cfg["train"]["iterations"] == 5000
    assert cfg["train"]["dist_batch"] == 8
    assert config.sample_batch(cfg, 16) == 1024 and config.sample_batch(cfg, 32) == 256
    assert cfg["color"]["subsample"] == 2 ** 14 and cfg["color"]["finetune_steps"] == 50
    tc = config.train_config(cfg, 64, "mmv2")
    assert tc.sample_batch == 256 and tc.solver.kind == "mmv2" and tc.solver.inner_iters == 5


def test_desk_preset_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"preset": "desk", "train": {"lr": 0.01}}))
    cfg = config.load(path, seed=7, dims=[2, 4])
    assert cfg["train"]["iterations"] == 1000 and cfg["train"]["lr"] == 0.01
    assert cfg["seed"] == 7 and cfg["dims"] == [2, 4]
    assert config.load(path, seed=None)["seed"] == 0


@pytest.mark.parametrize("bad", [
    {"nope": 1}, {"train": 3}, {"train": {"lr": 0}}, {"solver": {"kind": "sgd"}}, {"dims": []},
    {"preset": "huge"}, {"suite": {"n_train": 0}},
])
def test_invalid_configs(tmp_path, bad):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(config.ConfigError):
        config.load(path)


def test_unreadable_config(tmp_path):
    with pytest.raises(config.ConfigError):
        config.load(tmp_path / "missing.json")
    (tmp_path / "list.json").write_text("[1]")
    with pytest.raises(config.ConfigError):
        config.load(tmp_path / "list.json")


def test_preset_name_in_place_of_file():
    assert config.load("desk")["train"]["iterations"] == 1000
