import json

import pytest

from lvtos.config import ConfigError, PipelineConfig, from_dict, load_config


def test_defaults_round_trip(tmp_path):
    cfg = PipelineConfig()
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    assert load_config(path) == cfg
    assert from_dict(json.loads(cfg.dumps())).to_dict() == cfg.to_dict()


def test_partial_document_keeps_defaults():
    cfg = from_dict({"seed": 4, "tosnet": {"steps": 7}})
    assert cfg.seed == 4 and cfg.tosnet.steps == 7
    assert cfg.tosnet.lr == PipelineConfig().tosnet.lr


@pytest.mark.parametrize("doc, where", [
    ({"sed": 1}, "config"),
    ({"segnet": {"step": 3}}, "segnet"),
    ({"paths": {"data": "x"}}, "paths"),
])
def test_unknown_keys_rejected(doc, where):
    with pytest.raises(ConfigError, match=where):
        from_dict(doc)


@pytest.mark.parametrize("doc, msg", [
    ({"seed": "0"}, "seed: expected an integer"),
    ({"seed": True}, "seed: expected an integer"),
    ({"alpha": "x"}, "alpha: expected a number"),
    ({"segnet": {"augment": 1}}, "segnet.augment: expected true/false"),
    ({"tosnet": {"conv_channels": 16}}, "tosnet.conv_channels: expected a list"),
    ({"phantom": 3}, "phantom: expected an object"),
])
def test_type_errors_name_the_key(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        from_dict(doc)


@pytest.mark.parametrize("doc", [{"alpha": 0.0}, {"t0": -1.0}, {"baseline_threshold": 0.01},
                                 {"threads": 0}, {"phantom": {"n_cases": 0}}])
def test_invalid_values_rejected(doc):
    with pytest.raises(ValueError):
        from_dict(doc)


def test_ints_accepted_for_floats():
    assert from_dict({"alpha": 1}).alpha == 1.0


def test_output_dir_override(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"paths": {"output_dir": "a"}}))
    monkeypatch.setenv("LVTOS_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert load_config(path).paths.output_dir == str(tmp_path / "elsewhere")
    assert load_config().paths.output_dir == str(tmp_path / "elsewhere")
    monkeypatch.delenv("LVTOS_OUTPUT_DIR")
    assert load_config(path).paths.output_dir == "a"


def test_shipped_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.json")):
        load_config(p)
