"""Config loading: strict merge, dotted overrides, hashing, echo files."""

import json

import pytest

from stmae.config import DEFAULTS, config_hash, echo_config, load_config
from stmae.errors import ConfigError


def test_defaults_returned_as_fresh_copy():
    a = load_config()
    b = load_config()
    assert a == DEFAULTS
    a["model"]["d_enc"] = 999
    assert b["model"]["d_enc"] == DEFAULTS["model"]["d_enc"]
    assert DEFAULTS["model"]["d_enc"] != 999


def test_file_overlay(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"d_enc": 64}, "pretrain": {"steps": 7}}))
    cfg = load_config(p)
    assert cfg["model"]["d_enc"] == 64
    assert cfg["pretrain"]["steps"] == 7
    # untouched keys keep their defaults
    assert cfg["model"]["depth_enc"] == DEFAULTS["model"]["depth_enc"]


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"d_encc": 64}}))
    with pytest.raises(ConfigError, match="model.d_encc"):
        load_config(p)
    p.write_text(json.dumps({"nonsense": {}}))
    with pytest.raises(ConfigError, match="nonsense"):
        load_config(p)


def test_section_must_stay_a_section(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": 5}))
    with pytest.raises(ConfigError, match="section"):
        load_config(p)


def test_invalid_json_and_missing_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="valid JSON"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")


def test_dotted_overrides_parse_json_values():
    cfg = load_config(overrides={"pretrain.base_lr": "0.005",
                                 "model.d_enc": "64",
                                 "finetune.augment_scale": "[0.5, 1.0]",
                                 "eval.frame_averaged": "true"})
    assert cfg["pretrain"]["base_lr"] == 0.005
    assert cfg["model"]["d_enc"] == 64
    assert cfg["finetune"]["augment_scale"] == [0.5, 1.0]
    assert cfg["eval"]["frame_averaged"] is True


def test_dotted_override_unknown_key():
    with pytest.raises(ConfigError, match="model.bogus"):
        load_config(overrides={"model.bogus": "1"})
    with pytest.raises(ConfigError):
        load_config(overrides={"justakey": "1"})


def test_hash_is_stable_and_sensitive():
    a = load_config()
    b = load_config()
    assert config_hash(a) == config_hash(b)
    b["model"]["d_enc"] += 1
    assert config_hash(a) != config_hash(b)


def test_echo_config_round_trip(tmp_path):
    cfg = load_config()
    out = tmp_path / "echo.json"
    echo_config(cfg, out)
    doc = json.loads(out.read_text())
    stored_hash = doc.pop("config_sha256")
    assert doc == cfg
    assert stored_hash == config_hash(cfg)
