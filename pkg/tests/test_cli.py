import json
from pathlib import Path

import pytest

from ami import cli

ROOT = Path(__file__).parent.parent
QUICK = str(ROOT / "configs" / "synthetic_quick.yaml")


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path / "runs" / "quick"


def test_unknown_key_exits_with_config_code(out, capsys):
    assert run("train", "--config", QUICK, "--set", "model.d_modle=8") == cli.EXIT_CONFIG
    assert "model.d_modle" in capsys.readouterr().err


def test_bad_value_exits_with_config_code(out):
    assert run("train", "--config", QUICK, "--set", "loss.lambda2=-1") == cli.EXIT_CONFIG
    assert run("sweep-lambda2", "--config", QUICK, "--values", "a,b") == cli.EXIT_CONFIG
    assert run("ablate", "--config", QUICK, "nonsense") == cli.EXIT_CONFIG


def test_missing_checkpoint_is_a_runtime_error(out, capsys):
    assert run("eval", "--config", QUICK) == cli.EXIT_RUNTIME
    assert "checkpoint" in capsys.readouterr().err


def test_train_eval_and_reports(out, capsys):
    assert run("train", "--config", QUICK, "--set", "seed=3") == cli.EXIT_OK
    err = capsys.readouterr().err
    assert "override seed = 3" in err and "seed: 3" in err
    for name in ("config.yaml", "train_log.csv", "checkpoint.ami", "eval_val.json"):
        assert (out / name).exists(), name
    assert "seed: 3" in (out / "config.yaml").read_text()

    assert run("eval", "--config", QUICK, "--set", "seed=3", "--split", "test") == cli.EXIT_OK
    rep = json.loads((out / "eval_test.json").read_text())
    assert 0.0 <= rep["accuracy"] <= 100.0

    assert run("heatmap", "--config", QUICK, "--set", "seed=3") == cli.EXIT_OK
    assert (out / "heatmap_val.svg").read_text().startswith("<svg")

    assert run("energy", "--config", QUICK, "--set", "seed=3") == cli.EXIT_OK
    summary = json.loads((out / "energy.json").read_text())
    assert summary["ami"]["sensing_mj_per_window"] <= summary["dense"]["sensing_mj_per_window"]

    assert run("robustness-mask", "--config", QUICK, "--set", "seed=3", "--ps", "0,1") == cli.EXIT_OK
    assert (out / "robustness_mask.csv").exists()
    assert run("robustness-rate", "--config", QUICK, "--set", "seed=3", "--rates", "10,2") == cli.EXIT_OK
    assert run("robustness-rate", "--config", QUICK, "--set", "seed=3", "--rates", "3") == cli.EXIT_RUNTIME


def test_energy_from_policy_file(out, tmp_path):
    pol = tmp_path / "policy.json"
    pol.write_text(json.dumps({"duty_cycles": {"imu": 1.0, "ecg": 0.5},
                               "power_mw": {"imu": [0.3, 1.0], "ecg": [1.0, 5.0]}}))
    assert run("energy", "--config", QUICK, "--policy", str(pol)) == cli.EXIT_OK
    summary = json.loads((out / "energy.json").read_text())
    assert summary["battery_life_h"] == 300.0 / (0.65 + 0.5 * 3.0)
    pol.write_text(json.dumps({"duty_cycles": {"emg": 1.0}}))
    assert run("energy", "--config", QUICK, "--policy", str(pol)) == cli.EXIT_CONFIG


def test_gen_data_writes_a_loadable_cache(out):
    assert run("gen-data", "--config", QUICK, "--output", "d.amid") == cli.EXIT_OK
    cache = out / "d.amid"
    assert cache.exists()
    assert run("train", "--config", QUICK, "--set", "data.source=cache", "--set", f"data.cache={cache}",
               "--set", "train.epochs=1") == cli.EXIT_OK


def test_absolute_output_dir_ignores_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    target = tmp_path / "abs"
    assert run("gen-data", "--config", QUICK, "--set", f"output_dir={target}") == cli.EXIT_OK
    assert (target / "dataset.amid").exists() and not (tmp_path / "root").exists()
