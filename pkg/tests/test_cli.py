import json
import subprocess
import sys

import pytest

from pfdl import cli

TINY = {
    "clients": 3,
    "rounds_per_task": 3,
    "local_epochs": 1,
    "data": {"num_classes": 3, "input_dim": 6, "samples_per_class": 40,
             "rotation_degrees": [0, 180]},
    "arch": {"hidden_dims": [10, 6]},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def test_module_entry_point_runs(tiny_config, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pfdl", "run", "--config", str(tiny_config),
         "--out", str(tmp_path / "run")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "avg_final=" in proc.stdout
    assert (tmp_path / "run" / "metrics.csv").exists()


def test_run_twice_byte_identical(tiny_config, tmp_path):
    assert cli.main(["run", "--config", str(tiny_config),
                     "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", str(tiny_config),
                     "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "summary.csv", "metrics.json", "events.jsonl"):
        assert ((tmp_path / "a" / name).read_bytes()
                == (tmp_path / "b" / name).read_bytes())


def test_thread_env_does_not_change_bytes(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv("PFDL_THREADS", "1")
    cli.main(["run", "--config", str(tiny_config), "--out", str(tmp_path / "t1")])
    monkeypatch.setenv("PFDL_THREADS", "8")
    cli.main(["run", "--config", str(tiny_config), "--out", str(tmp_path / "t8")])
    assert ((tmp_path / "t1" / "metrics.csv").read_bytes()
            == (tmp_path / "t8" / "metrics.csv").read_bytes())


def test_bad_thread_env_is_config_error(tiny_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PFDL_THREADS", "many")
    code = cli.main(["run", "--config", str(tiny_config),
                     "--out", str(tmp_path / "x")])
    assert code == 2
    assert "error[config]: PFDL_THREADS" in capsys.readouterr().err


def test_seed_flag_overrides_config(tiny_config, tmp_path):
    cli.main(["run", "--config", str(tiny_config), "--seed", "42",
              "--out", str(tmp_path / "s")])
    man = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert man["config"]["seed"] == 42
    assert man["seeds"]["experiment"] == 42


def test_eval_reproduces_run_metrics(tiny_config, tmp_path):
    run_dir = tmp_path / "run"
    cli.main(["run", "--config", str(tiny_config), "--out", str(run_dir)])
    assert cli.main(["eval", str(run_dir)]) == 0
    assert ((run_dir / "metrics.csv").read_bytes()
            == (run_dir / "eval" / "metrics.csv").read_bytes())
    assert ((run_dir / "summary.csv").read_bytes()
            == (run_dir / "eval" / "summary.csv").read_bytes())
    assert ((run_dir / "metrics.json").read_bytes()
            == (run_dir / "eval" / "metrics.json").read_bytes())


def test_eval_reproduces_sharing_run(tiny_config, tmp_path):
    doc = dict(TINY, mode="sharing")
    cfg = tmp_path / "sharing.json"
    cfg.write_text(json.dumps(doc))
    run_dir = tmp_path / "share"
    cli.main(["run", "--config", str(cfg), "--out", str(run_dir)])
    cli.main(["eval", str(run_dir), "--out", str(tmp_path / "ev")])
    # physical parameter accounting survives the save/load cycle
    assert ((run_dir / "summary.csv").read_bytes()
            == (tmp_path / "ev" / "summary.csv").read_bytes())


def test_eval_missing_rundir_is_data_error(tmp_path, capsys):
    code = cli.main(["eval", str(tmp_path / "ghost")])
    assert code == 3
    assert "error[data]:" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path, capsys):
    code = cli.main(["run", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error[config]:" in capsys.readouterr().err


def test_invalid_json_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"mode": }')
    code = cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line 1" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "max relative error" in out


def test_gen_data_writes_datasets_and_manifest(tiny_config, tmp_path):
    out = tmp_path / "gen"
    assert cli.main(["gen-data", "--config", str(tiny_config),
                     "--out", str(out)]) == 0
    files = sorted(p.name for p in (out / "data").iterdir())
    assert files == ["data_manifest.json", "task_00.bin", "task_01.bin"]
    man = json.loads((out / "data" / "data_manifest.json").read_text())
    assert man["files"] == ["data/task_00.bin", "data/task_01.bin"]
    assert len(man["domains"]) == 2


def test_compare_one_summary_row_per_mode_and_seed(tiny_config, tmp_path):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--config", str(tiny_config), "--out", str(out),
                     "--modes", "pfeddil,fedavg,source_only",
                     "--seeds", "0,1"]) == 0
    rows = (out / "compare.csv").read_text().strip().splitlines()
    assert rows[0] == "mode,seed,avg_final,mean_forgetting,pool_size_mean,param_count_total"
    body = [r.split(",")[:2] for r in rows[1:]]
    assert body == [["pfeddil", "0"], ["pfeddil", "1"], ["fedavg", "0"],
                    ["fedavg", "1"], ["source_only", "0"], ["source_only", "1"]]
    sweep = (out / "lambda_sweep.csv").read_text().strip().splitlines()
    assert sweep[0] == "lambda,seed,avg_final,mean_forgetting,pool_size_mean,param_count_total"
    assert len(sweep) == 1 + 5 * 2  # five lambda values, two seeds
    # lambda = 0 rows coincide with fedavg rows (strategy degenerates)
    fedavg_rows = {r.split(",")[1]: r.split(",")[2] for r in rows[1:]
                   if r.startswith("fedavg")}
    for line in sweep[1:3]:
        lam, seed, avg = line.split(",")[:3]
        assert avg == fedavg_rows[seed]


def test_compare_rejects_unknown_mode(tiny_config, tmp_path, capsys):
    code = cli.main(["compare", "--config", str(tiny_config),
                     "--out", str(tmp_path / "c"), "--modes", "pfeddil,magic"])
    assert code == 2
    assert "magic" in capsys.readouterr().err
