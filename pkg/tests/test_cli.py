import json
import subprocess
import sys
from pathlib import Path

import pytest

from eqlab import artifacts
from eqlab.cli import build_table, format_cell, main, parse_seeds
from eqlab.exceptions import ConfigurationError

TINY = {
    "game": {"family": "sequential_auction", "mechanism": "first_price", "n_players": 3, "n_stages": 2},
    "learner": {"algo": "reinforce", "batch_size": 256, "iterations": 4, "hidden": [8]},
    "verifier": {"D": 4, "M_IS": 256},
    "run": {"seeds": [0], "eval_every": 2, "eval_batch": 512, "name": "tiny"},
}


def write_config(tmp_path, data=TINY, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_parse_seeds():
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("4,1") == [4, 1]
    with pytest.raises(ConfigurationError):
        parse_seeds("a..b")


def test_format_cell_uses_population_std():
    assert format_cell([0.001, 0.003]) == "0.0020 (0.0010)"


def test_train_verify_eval_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "runs"), "--set", "run.verify=true"]) == 0
    run = tmp_path / "runs" / "tiny" / "seed_0"
    names = {p.name for p in run.iterdir()}
    assert {"config.json", "checkpoint.json", "curve.csv", "metrics.json",
            "verifier_player_0.json", "verifier_player_2.json"} <= names
    curve = artifacts.read_csv(run / "curve.csv")
    assert [r["iteration"] for r in curve] == ["2", "4"]
    assert (run / "curve.csv").read_text().startswith("# config_hash=")
    metrics = artifacts.read_json(run / "metrics.json")
    assert metrics["players"]["1"]["loss_ver"] is not None
    assert metrics["players"]["1"]["loss_equ"] is not None
    assert main(["eval", str(run)]) == 0
    assert artifacts.read_json(run / "metrics.json")["players"]["1"]["loss_ver"] == metrics["players"]["1"]["loss_ver"]
    assert main(["verify", str(run), "--player", "1", "--D", "3", "--mis", "64"]) == 0
    assert "loss_ver" in capsys.readouterr().out


def test_outputs_are_byte_identical_across_workers(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    outs = []
    for workers in ("1", "3"):
        monkeypatch.setenv("EQLAB_WORKERS", workers)
        work = tmp_path / f"w{workers}"
        work.mkdir()
        monkeypatch.chdir(work)
        assert main(["train", "--config", str(cfg), "--out", "runs", "--seeds", "0,1"]) == 0
        assert main(["verify", "runs/tiny/seed_1", "--D", "4", "--mis", "300"]) == 0
        assert main(["sweep", "--config", str(cfg), "--analytic", "--D", "3,4", "--mis", "64,128",
                     "--out", "sweep.csv"]) == 0
        outs.append(snapshot(work))
    # two seeds of four files, three verifier reports, one sweep table
    assert len(outs[0]) == 12
    assert outs[0] == outs[1]


def test_table_aggregates_seeds(tmp_path, capsys):
    cfg = write_config(tmp_path, {**TINY, "learner": {**TINY["learner"], "iterations": 0},
                                  "run": {**TINY["run"], "eval_every": 0}})
    root = tmp_path / "runs"
    assert main(["train", "--config", str(cfg), "--out", str(root), "--seeds", "0..1"]) == 0
    for seed, val in ((0, 0.001), (1, 0.003)):
        path = root / "tiny" / f"seed_{seed}" / "metrics.json"
        m = artifacts.read_json(path)
        for p in m["players"].values():
            p["loss_equ"] = val
        artifacts.write_json(path, m)
    rows, cols = build_table([root])
    assert cols == ["setting", "metric", "reinforce"]
    loss = [r for r in rows if r["metric"] == "loss_equ"][0]
    assert loss["reinforce"] == "0.0020 (0.0010)"
    assert main(["table", str(root), "--out", str(tmp_path / "t.csv")]) == 0
    assert "0.0020 (0.0010)" in (tmp_path / "t.csv").read_text()


def test_table_refuses_mixed_configs(tmp_path):
    a = write_config(tmp_path, {**TINY, "learner": {**TINY["learner"], "iterations": 0}}, "a.json")
    b = write_config(tmp_path, {**TINY, "learner": {**TINY["learner"], "iterations": 0, "learning_rate": 0.01}},
                     "b.json")
    main(["train", "--config", str(a), "--out", str(tmp_path / "r"), "--set", "run.name=a"])
    main(["train", "--config", str(b), "--out", str(tmp_path / "r"), "--set", "run.name=b"])
    with pytest.raises(ConfigurationError) as err:
        build_table([tmp_path / "r"])
    assert "learner.learning_rate" in str(err.value)


def test_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, {"game": TINY["game"], "learner": {}}, "bad.json")
    assert main(["train", "--config", str(bad)]) == 2
    assert "learner.algo" in capsys.readouterr().err
    small = write_config(tmp_path, {**TINY, "game": {**TINY["game"], "n_players": 2}}, "small.json")
    assert main(["train", "--config", str(small)]) == 2
    cfg = write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--analytic", "--D", "64", "--mis", "1048576",
                 "--set", "verifier.memory_budget_mb=1", "--out", str(tmp_path / "s.csv")]) == 4
    assert "required" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "eqlab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "EQLAB_WORKERS" in out.stdout and "learner.algo" in out.stdout
