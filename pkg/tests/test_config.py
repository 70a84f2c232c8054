import json
import math

import pytest

from recap.config import ConfigError, RunConfig, load_config, parse_config


def test_defaults():
    cfg = RunConfig()
    recap = next(m for m in cfg.methods if m.kind == "recap")
    assert recap.lam == 0.5 and cfg.region.tau == 1.2
    assert cfg.seeds == (1, 2, 3, 4, 5)
    assert cfg.region.n_source_features == 500


def test_round_trip(tmp_path):
    cfg = RunConfig()
    cfg.dump(tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again.to_dict() == cfg.to_dict()
    assert again == cfg


def test_partial_config_keeps_defaults():
    cfg = parse_config({"methods": [{"kind": "recap", "lambda": 0.2, "name": "r02"}], "seeds": [3]})
    assert cfg.methods[0].lam == 0.2 and cfg.methods[0].label == "r02"
    assert cfg.seeds == (3,) and cfg.region.tau == 1.2


@pytest.mark.parametrize("raw, path", [
    ({"modle": {}}, "modle"),
    ({"model": {"hiden": 3}}, "model.hiden"),
    ({"methods": [{"kind": "tent"}]}, "methods[0].kind"),
    ({"methods": [{"kind": "recap", "lambda": -1}]}, "methods[0].lambda"),
    ({"scenarios": [{"batch_size": 1, "length": 10,
                     "domains": [{"kind": "rotate", "severty": 5}]}]}, "scenarios[0].domains[0].severty"),
    ({"scenarios": [{"batch_size": 1, "length": 10, "domains": [{"kind": "blur"}]}]},
     "scenarios[0].domains[0].kind"),
    ({"seeds": [1, 2.5]}, "seeds[1]"),
    ({"probe": {"n": 4, "last": 0}}, "probe.last"),
    ({"schema_version": 9}, "schema_version"),
])
def test_errors_name_the_offending_key(raw, path):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert str(err.value).startswith(path)


def test_duplicate_method_labels_rejected():
    with pytest.raises(ConfigError):
        parse_config({"methods": [{"kind": "recap"}, {"kind": "recap", "lambda": 1.0}]})


def test_label_schedule_parsing():
    cfg = parse_config({"scenarios": [
        {"name": "a", "batch_size": 4, "length": 40, "domains": [{"kind": "scale", "severity": 3}],
         "label_schedule": {"imbalanced": "inf"}},
        {"name": "b", "batch_size": 4, "length": 40, "domains": [{"kind": "scale"}],
         "label_schedule": {"imbalanced": 20}}]})
    assert math.isinf(cfg.scenarios[0].imbalance) and cfg.scenarios[1].imbalance == 20


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    (tmp_path / "ok.json").write_text(json.dumps({"seeds": [7]}))
    assert load_config(tmp_path / "ok.json").seeds == (7,)
