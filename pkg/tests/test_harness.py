import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qsgld.cli import main
from qsgld.errors import ConfigError, FormatError, UsageError
from qsgld.harness import (
    HEADER,
    SCHEMA_LINE,
    compare_runs,
    load_config,
    parse_config,
    read_error_samples,
    read_trajectory,
    run_experiment,
    write_trajectory,
)
from qsgld.optimizers import TrajectoryRecord
from qsgld.quantizer import QuantizationSchedule

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

QUAD = """
epochs = 5
seeds = [0, 1]
collect_errors = true

[objective]
name = "quadratic"
dim = 3
init_range = 2.0
batch_count = 4
noise_std = 0.5

[[optimizer]]
algorithm = "qsgld"
lam = 0.05
schedule = { eta = 8.0 }
compensation = { kappa = 2.0, tau0 = 4, lam = 0.05 }

[[optimizer]]
algorithm = "sgd"
lam = 0.05
"""


def _cfg(tmp_path, text=QUAD, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _strip_wall(path):
    lines = Path(path).read_text().splitlines()
    return [",".join(line.split(",")[:-1]) if line[0].isdigit() else line for line in lines]


def test_parse_config_defaults_and_labels():
    cfg = parse_config({"objective": {"name": "quadratic"}, "optimizer": [{"algorithm": "sgd"}],
                        "epochs": 3, "seeds": [0]})
    assert cfg.labels == ["sgd"] and cfg.optimizers[0].lam == 0.01 and not cfg.collect_errors


@pytest.mark.parametrize("bad", [
    {"objective": {}, "optimizer": [], "epochs": 3, "seeds": [0]},
    {"objective": {}, "optimizer": [{"algorithm": "sgd"}], "epochs": 0, "seeds": [0]},
    {"objective": {}, "optimizer": [{"algorithm": "sgd"}], "epochs": 3, "seeds": []},
    {"objective": {}, "optimizer": [{"algorithm": "sgd"}], "epochs": 3, "seeds": [-1]},
    {"objective": {}, "optimizer": [{"algorithm": "lbfgs"}], "epochs": 3, "seeds": [0]},
    {"objective": {}, "optimizer": [{"algorithm": "sgd", "lr": 0.1}], "epochs": 3, "seeds": [0]},
    {"objective": {}, "optimizer": [{"algorithm": "sgd", "lam": -1.0}], "epochs": 3, "seeds": [0]},
    {"objective": {}, "optimizer": [{"algorithm": "sgd"}, {"algorithm": "sgd"}], "epochs": 3, "seeds": [0]},
    {"objective": {"kind": "cnn"}, "optimizer": [{"algorithm": "sgd"}], "epochs": 3, "seeds": [0]},
    {"optimizer": [{"algorithm": "sgd"}], "epochs": 3, "seeds": [0]},
    {"objective": {}, "optimizer": [{"algorithm": "sgd"}], "epochs": 3, "seeds": [0], "verbose": True},
])
def test_parse_config_rejects(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError, match="line"):
        load_config(_cfg(tmp_path, "epochs = = 3\n"))


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("QSGLD_OUT", str(tmp_path / "envout"))
    assert load_config(_cfg(tmp_path)).output_dir == str(tmp_path / "envout")


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.toml")):
        assert load_config(p).optimizers


def test_run_writes_schema_and_is_deterministic(tmp_path):
    cfg = load_config(_cfg(tmp_path))
    a = run_experiment(cfg, output_dir=tmp_path / "a")
    b = run_experiment(cfg, output_dir=tmp_path / "b", threads=4)
    names = sorted(p.path.name for p in a)
    assert names == ["qsgld_seed0.csv", "qsgld_seed1.csv", "sgd_seed0.csv", "sgd_seed1.csv"]
    for oa, ob in zip(a, b):
        lines = oa.path.read_text().splitlines()
        assert lines[0] == SCHEMA_LINE and lines[1] == ",".join(HEADER)
        assert _strip_wall(oa.path) == _strip_wall(ob.path)
        if oa.error_path:
            assert oa.error_path.read_bytes() == ob.error_path.read_bytes()


def test_trajectory_records_follow_schedule(tmp_path):
    cfg = load_config(_cfg(tmp_path))
    out = run_experiment(cfg, output_dir=tmp_path)
    recs = read_trajectory(out[0].path)
    sched = QuantizationSchedule(eta=8.0, batches_per_epoch=4)
    assert [r.epoch for r in recs] == list(range(5))
    assert [r.qp for r in recs] == [sched.qp_at(4 * r.epoch) for r in recs]
    sgd = read_trajectory(out[2].path)
    assert all(r.qp is None and r.error_sum is None for r in sgd)


def test_error_csv_roundtrip_and_cap(tmp_path):
    cfg = load_config(_cfg(tmp_path))
    out = run_experiment(cfg, output_dir=tmp_path / "full", seeds=[0])
    step, qp, eps = read_error_samples(out[0].error_path)
    assert step.size == 5 * 4 * 3 and np.all(qp == 8.0) and np.all(np.abs(eps) <= 0.5)
    assert np.all(np.diff(step) >= 0)
    capped = run_experiment(cfg, output_dir=tmp_path / "cap", seeds=[0], limit_samples=7)
    assert read_error_samples(capped[0].error_path)[0].size == 7


def test_trajectory_roundtrip_and_divergence_marker(tmp_path):
    recs = [TrajectoryRecord(0, 1.5, None, 0.5, 8.0, 2.0, -0.25, 3),
            TrajectoryRecord(1, float("inf"), None, None, None, float("nan"), None, 1, diverged=True)]
    p = tmp_path / "t.csv"
    write_trajectory(p, recs)
    assert p.read_text().splitlines()[-1] == "#diverged"
    back = read_trajectory(p)
    assert back[0] == recs[0] and back[1].diverged and back[1].train_loss == float("inf")


def test_read_trajectory_schema_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("epoch,train_loss\n0,1.0\n")
    with pytest.raises(FormatError):
        read_trajectory(p)
    p.write_text(SCHEMA_LINE + "\nepoch,loss\n")
    with pytest.raises(FormatError):
        read_trajectory(p)


def test_compare_runs(tmp_path):
    cfg = load_config(_cfg(tmp_path))
    out = run_experiment(cfg, output_dir=tmp_path)
    rows = compare_runs([o.path for o in out], threshold=1e3)
    assert [r["optimizer"] for r in rows] == ["qsgld", "sgd"] and rows[0]["runs"] == 2
    assert rows[0]["median_epochs_to_threshold"] == 0.0
    a = compare_runs([out[0].path, out[1].path])
    b = compare_runs([out[0].path, out[1].path])
    assert a == b
    with pytest.raises(UsageError):
        compare_runs([])


def test_cli_run_and_compare(tmp_path, capsys):
    cfgp = _cfg(tmp_path)
    assert main(["run", "--config", str(cfgp), "--out", str(tmp_path / "o"), "--seed", "1"]) == 0
    files = sorted((tmp_path / "o").glob("*_seed1.csv"))
    assert [f.name for f in files] == ["qsgld_seed1.csv", "sgd_seed1.csv"]
    capsys.readouterr()
    assert main(["compare", *map(str, files), "--out", str(tmp_path / "s.csv")]) == 0
    assert "median_final_loss" in capsys.readouterr().out
    assert (tmp_path / "s.csv").read_text().startswith("optimizer,runs,")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 2
    bad = _cfg(tmp_path, "epochs = 3\nseeds = [0]\n[objective]\nname='quadratic'\n", "bad.toml")
    assert main(["run", "--config", str(bad)]) == 2
    assert "optimizer" in capsys.readouterr().err
    assert main(["compare"]) == 2
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n")
    assert main(["compare", str(junk)]) == 2
    div = _cfg(tmp_path, """
epochs = 50
seeds = [0]
[objective]
name = "quadratic"
dim = 1
x0 = [1.0]
[[optimizer]]
algorithm = "sgd"
lam = 3.0
""", "div.toml")
    assert main(["run", "--config", str(div), "--out", str(tmp_path / "d")]) == 3
    lines = (tmp_path / "d" / "sgd_seed0.csv").read_text().splitlines()
    assert lines[-1] == "#diverged" and len(lines) < 50


def test_cli_diagnose_json(tmp_path, capsys):
    assert main(["diagnose", "--variant", "uncompensated", "--n", "20000", "--seed", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["pass"] is True and rep["conditioned_level"] == 0 and rep["variant"] == "uncompensated"
    cfg = load_config(_cfg(tmp_path, QUAD.replace("dim = 3", "dim = 200")))
    out = run_experiment(cfg, output_dir=tmp_path, seeds=[0])
    assert main(["diagnose", "--errors", str(out[0].error_path), "--out", str(tmp_path / "w.json")]) == 0
    rep = json.loads((tmp_path / "w.json").read_text())
    assert set(rep) >= {"n", "uniform_ks", "mean_z", "var_ratio", "lag1_autocorr", "pass"}


def test_cli_weak_error_json_and_csv(tmp_path, capsys):
    assert main(["weak-error", "--seeds", "1000", "--g", "x1", "--out", str(tmp_path)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["lambda_values"] == [0.125, 0.0625, 0.03125] and len(rep["errors"]) == 3
    assert (tmp_path / "weak_error.csv").read_text().startswith("lambda,qp,error,stderr,raw_error")
    assert main(["weak-error", "--seeds", "10"]) == 2


def test_cli_list_defaults(capsys):
    assert main(["list-defaults"]) == 0
    out = capsys.readouterr().out
    for token in ("2^19", "1/eta^2", "2.0 or 4.0", "5-20%", "0.01", "0.9", "0.999", "1e-8"):
        assert token in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "qsgld", "list-defaults"], capture_output=True, text=True)
    assert res.returncode == 0 and "eta^2" in res.stdout
