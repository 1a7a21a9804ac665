import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dbmlab import cli, io
from dbmlab.dbm import Trajectory
from dbmlab.errors import ConfigValidationError, IntegrityError


def test_frames_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 7)
    v = np.sort(rng.normal(size=(7, 5)), axis=1)
    p = tmp_path / "f.bin"
    io.write_frames(p, t, v, labels=[3, 4, 5, 6, 7], beta=2.0, dt=1e-3, seed=11)
    d = io.read_frames(p)
    assert np.array_equal(d["times"], t) and np.array_equal(d["values"], v)
    assert d["labels"].tolist() == [3, 4, 5, 6, 7]
    assert (d["beta"], d["dt"], d["seed"]) == (2.0, 1e-3, 11)
    tr = Trajectory(t, v, np.arange(3, 8), 2.0, 1e-3, 11)
    io.save_trajectory(tr, tmp_path / "g.bin")
    back = io.load_trajectory(tmp_path / "g.bin")
    assert np.array_equal(back.positions, tr.positions) and back.seed == 11


def test_frames_truncated(tmp_path):
    p = tmp_path / "f.bin"
    io.write_frames(p, [0.0, 1.0], np.ones((2, 3)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(IntegrityError):
        io.read_frames(p)
    p.write_bytes(raw[:10])
    with pytest.raises(IntegrityError):
        io.read_frames(p)
    p.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(IntegrityError):
        io.read_frames(p)


def test_csv_and_json(tmp_path):
    io.write_csv(tmp_path / "a.csv", ["series", "x", "y"], [("s", 0.1, 2.0)])
    header, rows = io.read_csv(tmp_path / "a.csv")
    assert header == ["series", "x", "y"] and rows == [["s", "0.1", "2.0"]]
    assert io.sha256_json({"b": 1, "a": 2}) == io.sha256_json({"a": 2, "b": 1})


def _semicircle_cfg(out):
    return {"experiment": "semicircle-invariance", "N": 100, "beta": 2, "output_dir": str(out)}


@pytest.fixture(scope="module")
def semicircle_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sc")
    code = cli.run_experiment(_semicircle_cfg(out))
    return code, out


def test_semicircle_run_passes(semicircle_run):
    code, out = semicircle_run
    assert code == cli.EXIT_PASS
    doc = json.loads((out / "report.json").read_text())
    assert doc["all_passed"]
    assert doc["reports"][0]["statistics"]["sup_deviation"] <= 1e-4
    for name in ("manifest.json", "summary.csv", "figures/semicircle-invariance.csv",
                 "figures/semicircle-invariance.svg"):
        assert (out / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [0] and man["config_hash"] == io.sha256_json(man["config"])


def test_run_is_byte_identical(semicircle_run, tmp_path):
    _, out = semicircle_run
    assert cli.run_experiment(_semicircle_cfg(tmp_path)) == cli.EXIT_PASS
    assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_replay_identical(semicircle_run):
    _, out = semicircle_run
    code, reports = cli.replay(out / "manifest.json")
    assert code == cli.EXIT_PASS
    assert (out / "replay_report.json").read_bytes() == (out / "report.json").read_bytes()


def test_replay_threshold_override(semicircle_run):
    _, out = semicircle_run
    stored = json.loads((out / "report.json").read_text())["reports"][0]
    code, reports = cli.replay(out / "manifest.json", {"deviation": 1e-15}, write=False)
    assert code == cli.EXIT_CHECK
    assert reports[0].statistics == stored["statistics"]
    assert reports[0].thresholds["deviation"] == 1e-15
    assert not reports[0].all_passed


def test_replay_truncated_data(tmp_path):
    assert cli.run_experiment(_semicircle_cfg(tmp_path)) == cli.EXIT_PASS
    f = next((tmp_path / "data").iterdir())
    f.write_bytes(f.read_bytes()[:-16])
    code, _ = cli.replay(tmp_path / "manifest.json")
    assert code == cli.EXIT_RUNTIME
    with pytest.raises(IntegrityError):
        cli.load_bundle(tmp_path / "manifest.json")


def test_missing_beta_names_field(tmp_path, capsys):
    raw = _semicircle_cfg(tmp_path)
    del raw["beta"]
    with pytest.raises(ConfigValidationError) as err:
        cli.validate_config(raw)
    assert any(path == "beta" for path, _ in err.value.errors)
    assert cli.run_experiment(raw) == cli.EXIT_VALIDATION
    assert "beta" in capsys.readouterr().err


def test_unknown_keys_rejected(tmp_path):
    raw = _semicircle_cfg(tmp_path)
    raw["color"] = "red"
    with pytest.raises(ConfigValidationError):
        cli.validate_config(raw)
    raw = _semicircle_cfg(tmp_path)
    raw["params"] = {"nodez": 10}
    with pytest.raises(ConfigValidationError) as err:
        cli.validate_config(raw)
    assert err.value.errors[0][0].startswith("params")


def test_poisson_control_exit_code(tmp_path):
    raw = {"experiment": "level-repulsion", "N": 400, "beta": 1, "seeds": list(range(40)),
           "params": {"generator": "poisson-control", "n_boot": 20}, "output_dir": str(tmp_path)}
    assert cli.run_experiment(raw) == cli.EXIT_CHECK


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "env"))
    raw = _semicircle_cfg(tmp_path)
    del raw["output_dir"]
    assert cli.run_experiment(raw) == cli.EXIT_PASS
    assert (tmp_path / "env" / "report.json").exists()


def test_main_entry_points(tmp_path, capsys):
    assert cli.main(["list-experiments"]) == cli.EXIT_PASS
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert "persistent-trailing" in names and len(names) == 11
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == cli.EXIT_VALIDATION
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(_semicircle_cfg(tmp_path / "o")))
    r = subprocess.run([sys.executable, "-m", "dbmlab.cli", "run", str(cfg)], capture_output=True,
                       text=True, env={**os.environ, cli.ENV_WORKERS: "1"})
    assert r.returncode == 0, r.stderr
    man = str(tmp_path / "o" / "manifest.json")
    assert cli.main(["replay", man, "--threshold", "deviation=1e-15"]) == cli.EXIT_CHECK
    assert cli.main(["replay", man, "--threshold", "deviation"]) == cli.EXIT_VALIDATION
