import csv
import json

import numpy as np
import pytest

from sofd import dataio
from sofd.cli import main
from helpers import QUICK, SYNTHETIC_TOML


def raw_rows(per_speed=2):
    """Raw records covering every speed and every condition."""
    coefs = [(0.97, 1.05, 0.99, 0.995), (0.92, 1.05, 0.99, 0.995), (0.97, 1.15, 0.99, 0.995),
             (0.97, 1.05, 0.96, 0.995), (0.97, 1.05, 0.99, 0.98), (0.80, 1.05, 0.99, 0.995)]
    schema = dataio.Schema()
    rng = np.random.default_rng(0)
    for speed in range(1, 10):
        for c in coefs:
            for _ in range(per_speed):
                row = {schema.speed_column: speed}
                row.update(dict(zip(schema.coefficient_columns, c)))
                row.update({h: rng.normal() for _, h in schema.sensor_columns})
                yield row


def write_raw(path, rows, drop=()):
    schema = dataio.Schema()
    header = [h for h in schema.headers if h not in drop]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, header, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


def quick_args(out):
    args = ["--config", str(SYNTHETIC_TOML), "--out", str(out)]
    for item in QUICK:
        args += ["--set", item]
    return args


class TestIngest:
    def test_nine_speed_files(self, tmp_path, capsys):
        data = write_raw(tmp_path / "raw.csv", raw_rows())
        assert main(["ingest", "--data", str(data), "--out", str(tmp_path / "p")]) == 0
        files = sorted(p.name for p in (tmp_path / "p").iterdir())
        assert files == [f"speed_{s}.csv" for s in range(1, 10)]
        pool = dataio.read_prepared(tmp_path / "p" / "speed_4.csv")
        assert sorted(pool.condition.tolist()) == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
        assert "unassigned: 18" in capsys.readouterr().out

    def test_bad_schema(self, tmp_path, capsys):
        data = write_raw(tmp_path / "raw.csv", raw_rows(1), drop=("Fuel flow",))
        assert main(["ingest", "--data", str(data), "--out", str(tmp_path / "p")]) == 2
        assert "Fuel flow" in capsys.readouterr().err

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        assert main(["ingest", "--data", str(tmp_path / "e.csv"), "--out", str(tmp_path / "p")]) == 2


class TestRun:
    def test_synthetic(self, tmp_path, capsys):
        assert main(["run"] + quick_args(tmp_path / "r")) == 0
        printed = capsys.readouterr().out.strip()
        assert printed.endswith("report.json")
        assert (tmp_path / "r" / "report.json").is_file()

    def test_seed_override_changes_seed_field(self, tmp_path):
        assert main(["run"] + quick_args(tmp_path / "a")) == 0
        assert main(["run", "--seed", "7"] + quick_args(tmp_path / "b")) == 0
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        assert (a["seed"], b["seed"]) == (0, 7)
        assert a["config"]["seed"] == 0 and b["config"]["seed"] == 7
        a["config"].pop("seed")
        b["config"].pop("seed")
        assert a["config"] == b["config"]

    def test_speed_widths(self, tmp_path):
        from sofd.nnet import GcnModel

        args = ["run", "--speed", "5", "--config", str(SYNTHETIC_TOML), "--out", str(tmp_path / "s"),
                "--set", "dataset.per_class=120", "--set", "model.conv_widths=[2]",
                "--set", "train_m0.epochs=1", "--set", "train_m1.epochs=1"]
        assert main(args) == 0
        assert GcnModel.load(tmp_path / "s" / "m0.npz").fc_widths == (64, 8, 3)
        assert GcnModel.load(tmp_path / "s" / "m1.npz").fc_widths == (64, 8, 4)

    def test_ablate(self, tmp_path):
        assert main(["ablate", "--variant", "no_consistency"] + quick_args(tmp_path / "n")) == 0
        rep = json.loads((tmp_path / "n" / "report.json").read_text())
        assert rep["variant"] == "no_consistency" and rep["n_reliable"] == rep["n_pseudo"]

    def test_stage_failure_exit_3(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SOFD_DATA_DIR", raising=False)
        args = ["run", "--out", str(tmp_path / "o"), "--set", f'dataset.path="{tmp_path / "none.csv"}"']
        assert main(args) == 3
        assert (tmp_path / "o" / "error.json").is_file()

    def test_bad_override_exit_2(self, tmp_path):
        assert main(["run", "--out", str(tmp_path), "--set", "graph.nope=1"]) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.toml")]) == 2


def write_labels(path, labels):
    path.write_text("sample_id,label\n" + "".join(f"{i},{v}\n" for i, v in enumerate(labels)))
    return path


class TestEvaluate:
    def test_perfect(self, tmp_path, capsys):
        y = [0, 1, 2, 2, 1]
        p = write_labels(tmp_path / "p.csv", y)
        t = write_labels(tmp_path / "t.csv", y)
        assert main(["evaluate", "--pred", str(p), "--truth", str(t), "--out", str(tmp_path / "r.json")]) == 0
        assert "macro_f1 1.0000" in capsys.readouterr().out
        assert json.loads((tmp_path / "r.json").read_text())["macro_f1"] == 1.0

    def test_length_mismatch(self, tmp_path):
        p = write_labels(tmp_path / "p.csv", [0, 1])
        t = write_labels(tmp_path / "t.csv", [0, 1, 2])
        assert main(["evaluate", "--pred", str(p), "--truth", str(t)]) == 2

    def test_unknown_only(self, tmp_path, capsys):
        p = write_labels(tmp_path / "p.csv", [3, 3, 0])
        t = write_labels(tmp_path / "t.csv", [3, 3, 3])
        assert main(["evaluate", "--pred", str(p), "--truth", str(t), "--classes", "4"]) == 0
        out = capsys.readouterr().out
        assert "u_recall 0.6667" in out
        assert "degenerate" in out


def test_report_summary(tmp_path, capsys):
    assert main(["run"] + quick_args(tmp_path / "a")) == 0
    capsys.readouterr()
    rep = str(tmp_path / "a" / "report.json")
    assert main(["report", rep, rep, "--long", str(tmp_path / "l.csv")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[-1].startswith("mean")
    assert len((tmp_path / "l.csv").read_text().splitlines()) == 1 + 6


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in ("rejection.alpha", "graph.sigma2", "consistency.n_neighbors", "train_m0.lr"):
        assert key in out
