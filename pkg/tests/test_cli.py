import json
import xml.etree.ElementTree as ET

import pytest

from clipcl import curriculum as C
from clipcl.cli import main
from clipcl.dataio import load_dataset
from clipcl.report import read_runlog


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen", "--n", "30", "--seed", "7", "--count-max", "12", "--out", str(out)]) == 0
    return out


FAST = ["--stages", "3", "--epochs-per-stage", "1", "--batch-size", "4"]


def test_gen_counts_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--n", "12", "--seed", "7", "--out", str(a)]) == 0
    assert capsys.readouterr().out.strip() == str(a / "manifest.json")
    assert main(["gen", "--n", "12", "--seed", "7", "--out", str(b)]) == 0
    assert len(load_dataset(a / "manifest.json")) == 12
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "--n", "0", "--out", "x"],
        ["gen", "--n", "3", "--count-min", "5", "--count-max", "2", "--out", "x"],
        ["train", "--data", "x", "--epsilon", "1.0", "--out", "x"],
        ["train", "--data", "x", "--strategy", "bogus", "--out", "x"],
        ["nope"],
    ],
)
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_score(data_dir, tmp_path, capsys):
    out = tmp_path / "scores.txt"
    plot = tmp_path / "losses.svg"
    argv = ["score", "--data", str(data_dir), "--epochs", "1", "--seed", "2", "--out", str(out), "--plot", str(plot)]
    assert main(argv) == 0
    text = capsys.readouterr().out
    assert "median=" in text
    lines = out.read_text().splitlines()
    assert len(lines) == 24  # training split of 30
    scores = [float(l.split()[1]) for l in lines]
    assert all(s >= 0 for s in scores) and scores == sorted(scores)
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first
    ET.fromstring(plot.read_text())


def test_score_missing_dataset(tmp_path):
    assert main(["score", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "s.txt")]) == 1


def test_train_clip_matches_plan(data_dir, tmp_path):
    scores = tmp_path / "scores.txt"
    assert main(["score", "--data", str(data_dir), "--epochs", "1", "--out", str(scores)]) == 0
    argv = ["train", "--data", str(data_dir), "--scores", str(scores), "--strategy", "clip",
            "--pacing", "quadratic", "--epsilon", "0.05", "--seed", "3", "--out", str(tmp_path / "r")] + FAST
    assert main(argv) == 0
    log = read_runlog(tmp_path / "r" / "clip_seed3.csv")
    train, _ = load_dataset(data_dir).split(0.2)
    plan = C.build_clip_schedule(
        C.read_scores(scores, train), C.PacingParams("quadratic", 0.2, 3, 1), C.ClipConfig(0.05, "prefix_truncate", 4, 3)
    )
    assert log.column("samples_cum") == plan.cumulative_samples()
    assert (tmp_path / "r" / "clip_seed3.ckpt").is_file()
    meta = json.loads((tmp_path / "r" / "clip_seed3.meta.json").read_text())
    assert meta["strategy"] == "clip" and meta["epsilon"] == 0.05
    plan_doc = json.loads((tmp_path / "r" / "clip_seed3.plan.json").read_text())
    assert [s["size"] for s in plan_doc["stages"]] == plan.stage_sizes


def test_train_standard_sample_count(tmp_path):
    data = tmp_path / "d"
    # 250 scenes leave a 200-sample training pool after the 20% validation split
    assert main(["gen", "--n", "250", "--seed", "1", "--out", str(data)]) == 0
    argv = ["train", "--data", str(data), "--strategy", "standard", "--epochs", "20",
            "--batch-size", "50", "--no-augment", "--out", str(tmp_path / "r")]
    assert main(argv) == 0
    log = read_runlog(tmp_path / "r" / "standard_seed0.csv")
    assert log.rows[-1].samples_cum == 4000
    assert len(log.rows) == 20


def test_train_config_error_exit_1(data_dir, tmp_path, capsys):
    argv = ["train", "--data", str(data_dir), "--strategy", "clip", "--score-epochs", "0",
            "--stages", "3", "--batch-size", "8", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert "stage 1" in capsys.readouterr().err


def test_train_replicate_seeds(data_dir, tmp_path, capsys):
    argv = ["train", "--data", str(data_dir), "--strategy", "standard", "--epochs", "2", "--batch-size", "8",
            "--seeds", "1,2", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert (tmp_path / "standard_seed1.csv").is_file() and (tmp_path / "standard_seed2.csv").is_file()
    single = tmp_path / "single"
    assert main(argv[:-4] + ["--seed", "2", "--out", str(single)]) == 0
    assert (single / "standard_seed2.csv").read_bytes() == (tmp_path / "standard_seed2.csv").read_bytes()


def test_eval(data_dir, tmp_path, capsys):
    assert main(["train", "--data", str(data_dir), "--strategy", "standard", "--epochs", "1",
                 "--batch-size", "8", "--out", str(tmp_path)]) == 0
    ckpt = str(tmp_path / "standard_seed0.ckpt")
    capsys.readouterr()
    assert main(["eval", "--data", str(data_dir), "--checkpoint", ckpt, "--self-check"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["mae"] == 0 and rec["game"] == 0 and rec["psnr"] == 100.0
    out = tmp_path / "m.json"
    assert main(["eval", "--data", str(data_dir), "--checkpoint", ckpt, "--split", "all", "--game-level", "3", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["game_level"] == 3


def test_eval_errors(data_dir, tmp_path):
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
    assert main(["train", "--data", str(data_dir), "--strategy", "standard", "--epochs", "1",
                 "--batch-size", "8", "--out", str(tmp_path)]) == 0
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(tmp_path / "standard_seed0.ckpt"),
                 "--game-level", "9"]) == 2


def test_report(data_dir, tmp_path, capsys):
    assert main(["train", "--data", str(data_dir), "--strategy", "standard", "--epochs", "3",
                 "--batch-size", "8", "--out", str(tmp_path)]) == 0
    log = str(tmp_path / "standard_seed0.csv")
    capsys.readouterr()
    assert main(["report", "--logs", log, log, "--loss-threshold", "1e-9", "--out", str(tmp_path / "rep")]) == 0
    out = capsys.readouterr().out
    assert out.count("not reached") == 2
    ET.fromstring((tmp_path / "rep" / "loss_vs_samples.svg").read_text())
    header = (tmp_path / "rep" / "comparison.csv").read_text().splitlines()[0]
    assert header == "samples_cum,standard_seed0_train_loss,standard_seed0_2_train_loss"
    threshold = (tmp_path / "rep" / "threshold.csv").read_text().splitlines()
    assert threshold[1:] == ["standard_seed0,not reached", "standard_seed0_2,not reached"]


def test_report_identical_logs_same_threshold(data_dir, tmp_path, capsys):
    assert main(["train", "--data", str(data_dir), "--strategy", "standard", "--epochs", "3",
                 "--batch-size", "8", "--out", str(tmp_path)]) == 0
    log = str(tmp_path / "standard_seed0.csv")
    capsys.readouterr()
    assert main(["report", "--logs", log, log, "--loss-threshold", "1e9", "--out", str(tmp_path / "rep")]) == 0
    lines = (tmp_path / "rep" / "threshold.csv").read_text().splitlines()[1:]
    assert lines[0].split(",")[1] == lines[1].split(",")[1]


def test_report_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("stage,epoch,samples_cum,train_loss,val_mae,val_game,val_ssim,val_psnr\n1,1,x\n")
    assert main(["report", "--logs", str(bad), str(bad), "--out", str(tmp_path)]) == 1
    assert main(["report", "--logs", str(bad), "--out", str(tmp_path)]) == 2
