import csv

import numpy as np
import pytest

from ufo.cli import main
from ufo.metrics import RunReport

QUICK = "epochs = 15\nflow_epochs = 5\nnodes_per_class = 12\nreplay_batch = 16\n"


@pytest.fixture
def quick_config(tmp_path):
    path = tmp_path / "quick.cfg"
    path.write_text(QUICK)
    return str(path)


def test_eval_hand_matrix(tmp_path, capsys):
    path = tmp_path / "hand.csv"
    path.write_text("i,j,accuracy\n1,1,0.9\n2,1,0.6\n2,2,0.8\n")
    assert main(["eval", str(path)]) == 0
    assert capsys.readouterr().out == "accuracy=0.7\nforgetting=-0.3\n"


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_failure_exits_1(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing.csv")]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("lr = fast\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


def test_run_twice_gives_identical_reports(tmp_path, quick_config, capsys):
    for name in ("a", "b"):
        assert main(["run", "--config", quick_config, "--mode", "bare", "--noise", "0.3", "--seed", "1", "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "report.txt").read_bytes()
    assert a == (tmp_path / "b" / "report.txt").read_bytes()
    report = RunReport.from_text(a.decode())
    assert report.mode == "bare" and report.seed == 1
    for f in ("matrix.csv", "matrix.svg", "matrix.png", "timings.csv"):
        assert (tmp_path / "a" / f).is_file()


def test_run_with_scores_and_checkpoints(tmp_path, quick_config, capsys):
    dump = tmp_path / "scores.csv"
    out = tmp_path / "run"
    args = ["run", "--config", quick_config, "--noise-ratio", "0.3", "--noise-kind", "pair", "--seed", "2"]
    assert main(args + ["--out", str(out), "--dump-scores", str(dump), "--checkpoint-every", "1"]) == 0
    rows = list(csv.DictReader(dump.open()))
    assert list(rows[0]) == ["node_id", "clean_label", "observed_label", "noisy_flag", "raw_score", "final_score"]
    flips = sum(int(r["noisy_flag"]) for r in rows)
    assert flips == sum(RunReport.from_text((out / "report.txt").read_text()).flips)
    assert all((int(r["observed_label"]) != int(r["clean_label"])) == bool(int(r["noisy_flag"])) for r in rows)
    assert sorted(p.name for p in out.glob("checkpoint_task*.bin")) == [f"checkpoint_task{t}.bin" for t in (1, 2, 3)]
    assert (out / "scores.png").is_file()
    resumed = tmp_path / "resumed"
    assert main(args + ["--out", str(resumed), "--resume", str(out / "checkpoint_task1.bin")]) == 0
    assert (resumed / "matrix.csv").read_bytes() == (out / "matrix.csv").read_bytes()


def test_gen_data_then_run_from_directory(tmp_path, quick_config, capsys):
    assert main(["gen-data", "--config", quick_config, "--seed", "3", "--out", str(tmp_path / "ds")]) == 0
    assert main(["run", "--config", quick_config, "--mode", "bare", "--data", str(tmp_path / "ds"), "--seed", "3", "--out", str(tmp_path / "r")]) == 0
    assert main(["run", "--config", quick_config, "--mode", "bare", "--seed", "3", "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r" / "report.txt").read_text() == (tmp_path / "r2" / "report.txt").read_text()


def test_ablate_emits_matrices_and_ordered_summary(tmp_path, quick_config, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", quick_config, "--noise-ratio", "0.3", "--seeds", "1", "--out", str(out)]) == 0
    assert len(list(out.glob("matrix_*_seed1.csv"))) == 5
    lines = (out / "ablation.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in lines[1:]] == ["BM", "BM+KP", "BM+KP+NS", "BM+KP+NS+R", "UFO"]
    assert (out / "ablation.png").is_file()


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
