import csv
import json
import subprocess
import sys

import pytest

from fedghbm import cli

BASE = {
    "name": "tiny",
    "output_dir": "results",
    "task": {"kind": "logistic", "n": 200, "d_in": 3, "n_classes": 3},
    "partition": {"kind": "iid", "num_clients": 5},
    "sampler": {"kind": "uniform", "participation": 0.4},
    "algorithm": {"name": "ghbm", "beta": 0.5, "tau": 2, "client_lr": 0.1, "local_steps": 2},
    "rounds": 6,
    "batch_size": 8,
    "eval_every": 2,
    "seed": 0,
}


def write_config(tmp_path, **changes):
    cfg = json.loads(json.dumps(BASE))
    cfg.update(changes)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestRun:
    def test_outputs(self, tmp_path):
        path = write_config(tmp_path)
        assert cli.main(["run", str(path)]) == 0
        rows = read_csv(tmp_path / "results" / "tiny.csv")
        assert rows[0] == ["round", "train_loss", "test_loss", "test_accuracy", "deviation", "bytes_cum"]
        assert len(rows) - 1 == 6 // 2 + 1
        manifest = json.loads((tmp_path / "results" / "tiny.manifest.json").read_text())
        assert len(manifest["config_hash"]) == 64
        assert manifest["seed"] == 0
        assert 0.0 <= manifest["final"]["final_quality"] <= 1.0

    def test_rerun_is_byte_identical(self, tmp_path):
        path = write_config(tmp_path)
        cli.main(["run", str(path)])
        first = (tmp_path / "results" / "tiny.csv").read_bytes()
        cli.main(["run", str(path)])
        assert (tmp_path / "results" / "tiny.csv").read_bytes() == first

    def test_paths_relative_to_config(self, tmp_path, monkeypatch):
        sub = tmp_path / "cfg"
        sub.mkdir()
        path = write_config(sub)
        monkeypatch.chdir(tmp_path)
        assert cli.main(["run", "cfg/exp.json"]) == 0
        assert (sub / "results" / "tiny.csv").exists()

    def test_probe_csv_written_with_probe_taus(self, tmp_path):
        path = write_config(tmp_path, probe_taus=[1, 2])
        assert cli.main(["run", str(path)]) == 0
        rows = read_csv(tmp_path / "results" / "tiny.deviation.csv")
        assert rows[0] == ["round", "tau", "deviation", "deviation_raw"]
        assert len(rows) == 1 + 2 * 3


class TestConfigErrors:
    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
        assert "nope.json:1:" in capsys.readouterr().err

    def test_bad_json_line(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "name": "x",\n  "rounds": 3,,\n}\n')
        assert cli.main(["run", str(path)]) == 2
        assert "bad.json:3:" in capsys.readouterr().err

    def test_unknown_key_anchored(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(BASE))
        cfg["algorithm"]["momentum"] = 0.9
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(cfg, indent=2))
        assert cli.main(["run", str(path)]) == 2
        err = capsys.readouterr().err
        line = next(i for i, l in enumerate(path.read_text().splitlines(), 1) if '"momentum"' in l)
        assert f"exp.json:{line}:" in err and "momentum" in err

    def test_out_of_range_value_anchored(self, tmp_path, capsys):
        path = write_config(tmp_path, rounds=0)
        assert cli.main(["run", str(path)]) == 2
        err = capsys.readouterr().err
        line = next(i for i, l in enumerate(path.read_text().splitlines(), 1) if '"rounds"' in l)
        assert f"exp.json:{line}:" in err

    def test_semantic_error(self, tmp_path, capsys):
        path = write_config(tmp_path, sampler={"kind": "cyclic", "participation": 0.6})
        assert cli.main(["run", str(path)]) == 2
        assert "cyclic" in capsys.readouterr().err

    def test_runtime_failure_exit_1(self, tmp_path, capsys):
        path = write_config(
            tmp_path,
            task={"kind": "quadratic", "n": 100, "test_fraction": 0},
            algorithm={"name": "fedavg", "client_lr": 10.0, "local_steps": 5},
            rounds=40,
        )
        with pytest.warns(RuntimeWarning):
            assert cli.main(["run", str(path)]) == 1
        assert "round" in capsys.readouterr().err


class TestSweep:
    def test_cells_and_summary(self, tmp_path):
        path = write_config(tmp_path, sweep={"tau": [1, 2], "seed": [0, 1, 2]})
        assert cli.main(["sweep", str(path)]) == 0
        out = tmp_path / "results"
        assert len(list(out.glob("tiny__*.csv"))) == 6
        rows = read_csv(out / "tiny.summary.csv")
        assert rows[0] == ["tau", "metric", "mean", "std", "n_seeds"]
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        assert all(r[-1] == "3" for r in rows[1:])

    def test_cell_count(self, tmp_path):
        exp = cli.load_experiment(write_config(tmp_path, sweep={"beta": [0.1, 0.5], "seed": [0, 1, 2]}))
        cells = exp.cells()
        assert len(cells) == 6
        assert {c.algorithm.beta for _, c in cells} == {0.1, 0.5}

    def test_empty_sweep_behaves_as_run(self, tmp_path):
        path = write_config(tmp_path, sweep={})
        assert cli.main(["sweep", str(path)]) == 0
        swept = (tmp_path / "results" / "tiny.csv").read_bytes()
        cli.main(["run", str(path)])
        assert (tmp_path / "results" / "tiny.csv").read_bytes() == swept


class TestProbe:
    def test_default_taus(self, tmp_path, capsys):
        path = write_config(tmp_path, algorithm={"name": "fedavg", "client_lr": 0.1})
        assert cli.main(["probe", str(path)]) == 0
        rows = read_csv(tmp_path / "results" / "tiny.deviation.csv")
        assert {r[1] for r in rows[1:]} == {"1", "2"}  # 1 and 1/C rounded
        manifest = json.loads((tmp_path / "results" / "tiny.manifest.json").read_text())
        assert set(manifest["mean_deviation"]) == {"1", "2"}


class TestVerify:
    def test_passes(self, capsys):
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") == 6

    def test_sign_flip_fails(self, monkeypatch, capsys):
        from fedghbm import algorithms

        orig = algorithms.ghbm_momentum
        monkeypatch.setattr(algorithms, "ghbm_momentum", lambda *a: -orig(*a))
        assert cli.main(["verify"]) == 1
        assert "form equivalence" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "fedghbm", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "verify" in proc.stdout


def test_schema_matches_config_fields():
    from dataclasses import fields

    from fedghbm.config import RunConfig

    schema = cli.load_schema()
    run_fields = {f.name for f in fields(RunConfig)}
    assert run_fields | {"name", "output_dir", "sweep"} == set(schema["properties"])
