"""End-to-end tests of the amflow command line."""

import json
import os

import pytest
from PIL import Image

import main
from src import commands
from src.flow_io import list_frames
from src.synthgen import generate, load_scene

SCENES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenes")


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    """Ground truth of the first three frame pairs of the demo scene."""
    out = tmp_path_factory.mktemp("demo") / "gt"
    generate(load_scene(os.path.join(SCENES, "demo_occlusion.json"), frames=4), str(out), threads=1)
    return str(out)


def test_usage_errors_exit_with_two():
    assert main.main([]) == 2
    assert main.main(["eval", "--gt", "somewhere"]) == 2
    assert main.main(["eval", "--means", "0.5", "0.5", "--pred", "x"]) == 2
    assert main.main(["gen", "--scene", "x.json", "--out", "y", "--threads", "0"]) == 2
    assert main.main(["baseline", "--method", "median", "--flow", "a", "--masks", "b", "--out", "c"]) == 2


def test_help_exits_with_zero():
    assert main.main(["--help"]) == 0


def test_eval_from_means(capsys, tmp_path):
    report = tmp_path / "afq.json"
    assert main.main(["eval", "--means", "0.494", "0.424", "--json", str(report)]) == 0
    assert capsys.readouterr().out.startswith("AFQ    0.4576")
    assert json.loads(report.read_text(encoding="utf-8"))["afq"] == pytest.approx(0.457664, abs=1e-6)


def test_eval_means_out_of_range():
    assert main.main(["eval", "--means", "1.5", "0.2"]) == 2


def test_gen_then_eval_scores_one(tmp_path, capsys):
    out = tmp_path / "gt"
    assert main.main(["gen", "--scene", os.path.join(SCENES, "translation.json"), "--out", str(out)]) == 0
    assert list_frames(str(out)) == [0]

    report = tmp_path / "report.json"
    assert main.main(["eval", "--gt", str(out), "--pred", str(out), "--json", str(report)]) == 0
    assert "AFQ    1.000000" in capsys.readouterr().out
    data = json.loads(report.read_text(encoding="utf-8"))
    assert data["afq"] == 1.0
    assert [level["level"] for level in data["per_level"]] == [0, 1]


def test_demo_scene_round_trip(tmp_path, capsys):
    out = tmp_path / "demo"
    assert main.main(["gen", "--scene", os.path.join(SCENES, "demo_occlusion.json"), "--out", str(out)]) == 0
    assert list_frames(str(out)) == list(range(9))
    assert main.main(["eval", "--gt", str(out), "--pred", str(out)]) == 0
    assert "AFQ    1.000000" in capsys.readouterr().out


def test_eval_report_does_not_depend_on_thread_count(demo, tmp_path):
    one, many = tmp_path / "one.json", tmp_path / "many.json"
    assert main.main(["eval", "--gt", demo, "--pred", demo, "--threads", "1", "--json", str(one)]) == 0
    assert main.main(["eval", "--gt", demo, "--pred", demo, "--threads", "8", "--json", str(many)]) == 0
    assert one.read_bytes() == many.read_bytes()
    assert json.loads(one.read_text(encoding="utf-8"))["afq"] == 1.0


def test_eval_frame_mismatch(demo, tmp_path):
    pred = tmp_path / "pred"
    assert main.main(["baseline", "--method", "zero", "--flow", demo, "--masks", demo, "--out", str(pred)]) == 0
    os.rename(pred / "frame_000002", pred / "frame_000007")
    assert main.main(["eval", "--gt", demo, "--pred", str(pred)]) == 2


def test_eval_missing_directory(tmp_path):
    assert main.main(["eval", "--gt", str(tmp_path / "a"), "--pred", str(tmp_path / "b")]) == 2


def test_baselines_rank_above_zero(demo, tmp_path):
    scores = {}
    for method in ("near-boundary", "mean", "zero"):
        pred = tmp_path / method
        assert main.main(["baseline", "--method", method, "--flow", demo, "--masks", demo, "--out", str(pred)]) == 0
        assert list_frames(str(pred)) == list_frames(demo)
        report = tmp_path / f"{method}.json"
        assert main.main(["eval", "--gt", demo, "--pred", str(pred), "--json", str(report)]) == 0
        scores[method] = json.loads(report.read_text(encoding="utf-8"))
    for data in scores.values():
        assert data["miou"] == 1.0
    assert scores["near-boundary"]["afq"] > scores["zero"]["afq"]
    assert scores["mean"]["afq"] > scores["zero"]["afq"]


@pytest.mark.parametrize("extra, mode", [([], "modal"), (["--amodal"], "amodal")])
def test_track(demo, tmp_path, extra, mode):
    out = tmp_path / "tracks.json"
    assert main.main(["track", "--seg", demo, "--flow", demo, "--out", str(out)] + extra) == 0
    data = json.loads(out.read_text(encoding="utf-8"))
    assert data["mode"] == mode
    assert [f["frame"] for f in data["frames"]] == [0, 1, 2]
    assert data["score"]["checks"] > 0
    assert 0.0 <= data["score"]["association_accuracy"] <= 1.0


def test_stats_csv(demo, tmp_path):
    out = tmp_path / "stats.csv"
    assert main.main(["stats", "--flow", demo, "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "histogram,bin,lower,upper,count,log10_count"
    assert len(lines) == 1 + 36 + 101
    assert main.main(["stats", "--flow", demo, "--source", "amodal", "--out", str(tmp_path / "amodal.csv")]) == 0


def test_viz(demo, tmp_path):
    out = tmp_path / "viz.png"
    assert main.main(["viz", "--stack", demo, "--frame", "1", "--out", str(out)]) == 0
    with Image.open(out) as image:
        assert image.size == (128, 96)
    assert main.main(["viz", "--stack", demo, "--frame", "3", "--out", str(out)]) == 2


def test_unexpected_errors_exit_with_one(monkeypatch, demo, tmp_path):
    def boom(args):
        raise RuntimeError("boom")

    monkeypatch.setitem(commands.COMMANDS, "viz", boom)
    assert main.main(["viz", "--stack", demo, "--out", str(tmp_path / "viz.png")]) == 1


def test_log_file_is_written(log_dir, tmp_path):
    assert main.main(["eval", "--means", "0.5", "0.5"]) == 0
    assert list(log_dir.glob("amflow-*.log"))
