import json

import pytest

from remixit.config import PRESETS, derive_seed, load_config, load_roles, preset, train_config_from, validate
from remixit.exceptions import ConfigError


@pytest.mark.parametrize("name", PRESETS)
def test_presets_validate(name):
    cfg = load_config(name)
    assert cfg["name"] == name
    config = train_config_from(cfg)
    assert config.regime in ("remixit", "adapt")


def test_unknown_keys_rejected_with_path():
    cfg = preset("fig2_sequential")
    cfg["train"]["epoch"] = 3
    with pytest.raises(ConfigError, match="train"):
        validate(cfg)
    with pytest.raises(ConfigError, match="data/train"):
        validate({"data": {"train": {"synth": {"n_items": 4}, "manifest": "x.json"}}})


def test_bad_json_and_missing(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(tmp_path / "c.json"))
    with pytest.raises(ConfigError, match="no config file"):
        load_config(str(tmp_path / "missing.json"))


def test_load_roles_split_and_seeds():
    data = {"train": {"synth": {"n_items": 10, "duration_s": 0.05}, "split": "mixit"},
            "test": {"synth": {"n_items": 3, "duration_s": 0.05}}}
    roles = load_roles(data, seed=0)
    assert len(roles["mixtures"]) == 8 and len(roles["noise"]) == 2
    assert roles["source"].kind == "paired" and len(roles["test"]) == 3
    assert derive_seed(0, 11) != derive_seed(1, 11)
    assert derive_seed(5, 11) == derive_seed(5, 11)


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(preset("fig3_zero_shot")))
    assert load_config(str(path)) == preset("fig3_zero_shot")
