import dataclasses

import pytest
import yaml

from ami.config import ConfigError, RunConfig, dump_config, from_dict, load_config, parse_override


def test_every_field_has_a_default():
    cfg = RunConfig()
    assert cfg.loss.lambda2 == 0.1 and cfg.train.epochs == 100 and cfg.train.batch == 32
    assert cfg.model.d_model == 256 and cfg.model.gate_hidden == 256 and cfg.train.bptt_window == 10


def test_round_trip_through_yaml(tmp_path):
    cfg = load_config(None, ["train.lr=3e-3", "model.layers=2", "seed=7"])
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_unknown_key_is_rejected_with_its_path(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"model": {"d_modle": 8}}))
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.path == "model.d_modle"


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="bogus"):
        from_dict(RunConfig, {"bogus": 1})


def test_type_errors_name_the_field():
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["train.epochs=ten"])
    assert exc.value.path == "train.epochs"
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["train.switches.amc_on=3"])
    assert exc.value.path == "train.switches.amc_on"


def test_validation_errors_name_the_field():
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["loss.lambda2=-1"])
    assert exc.value.path == "loss.lambda2"
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["energy.mode=weird"])
    assert exc.value.path == "energy.mode"


def test_lambda_aliases():
    assert parse_override("λ2=0.2") == ("loss.lambda2", 0.2)
    assert load_config(None, ["lambda3=0.5"]).loss.lambda3 == 0.5


def test_override_parsing():
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    assert parse_override("a=true") == ("a", True)
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")


def test_scientific_notation_without_dot_is_a_float():
    assert load_config(None, ["train.lr=3e-3"]).train.lr == 0.003


def test_ints_are_accepted_for_floats_but_not_the_reverse():
    assert load_config(None, ["loss.lambda1=2"]).loss.lambda1 == 2.0
    with pytest.raises(ConfigError):
        load_config(None, ["train.batch=2.5"])


def test_overrides_apply_after_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("loss:\n  lambda2: 0.05\n")
    assert load_config(p, ["loss.lambda2=0.2"]).loss.lambda2 == 0.2
    assert load_config(p).loss.lambda2 == 0.05


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a list\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(bad)


def test_nested_sections_are_dataclasses():
    cfg = load_config(None, ["data.synthetic.num_modalities=4", "data.synthetic.informative=[0, 2]"])
    assert cfg.data.synthetic.num_modalities == 4
    assert cfg.data.synthetic.informative == [0, 2]
    assert dataclasses.is_dataclass(cfg.train.switches)


def test_digest_tracks_content():
    a, b = RunConfig(), load_config(None, ["seed=1"])
    assert a.digest() != b.digest()
    assert a.digest() == RunConfig().digest()


def test_reference_config_loads():
    from pathlib import Path

    for p in sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")):
        load_config(p)
