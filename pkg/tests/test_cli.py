import csv
import json

import pytest

from deckland.cli import main
from deckland.harness import CSV_COLUMNS, EpisodeLog, read_episodes_csv, read_stats_json


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--scenario", "calm_static", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_run_writes_outputs(run_dir):
    for name in ("episode_3.json", "episodes.csv", "stats.json", "scenario.json", "touchdown_scatter.png",
                 "deviation_histograms.png", "timeline_3.png"):
        assert (run_dir / name).exists(), name
    (rep,) = read_episodes_csv(run_dir / "episodes.csv")
    assert rep == EpisodeLog.load(run_dir / "episode_3.json").report
    assert read_stats_json(run_dir / "stats.json").n_episodes == 1
    with open(run_dir / "episodes.csv", newline="") as fh:
        assert tuple(next(csv.reader(fh))) == CSV_COLUMNS


def test_report_formats(run_dir, capsys):
    assert main(["report", "--in", str(run_dir), "--format", "json", "--no-figures"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n_episodes"] == 1 and doc["success_rate"] == 1.0
    assert main(["report", "--in", str(run_dir), "--format", "csv"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["quantity", "value", "sigma"]
    assert ["n_episodes", "1", ""] in rows
    assert (run_dir / "stats.csv").exists()


def test_plotdata(run_dir, capsys):
    assert main(["plotdata", "--in", str(run_dir)]) == 0
    d = run_dir / "plotdata"
    with open(d / "touchdown_scatter.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["success"] == "True"
    assert abs(float(rows[0]["forward"])) < 0.1
    with open(d / "timeline_3.csv", newline="") as fh:
        trace = list(csv.DictReader(fh))
    states = [r["state"] for r in trace]
    assert states[0] == "GetAltitude" and "Flare" in states
    assert [float(r["t"]) for r in trace] == sorted(float(r["t"]) for r in trace)
    assert (d / "hist_position_dev.csv").exists()


def test_mc_command(tmp_path):
    assert main(["mc", "--scenario", "calm_static", "-n", "2", "--base-seed", "10", "--logs", "--out",
                 str(tmp_path), "--no-figures"]) == 0
    reps = read_episodes_csv(tmp_path / "episodes.csv")
    assert [r.seed for r in reps] == [10, 11]
    assert (tmp_path / "episode_11.json").exists()


def test_errors_are_reported(tmp_path, capsys):
    assert main(["run", "--scenario", "no_such_preset", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["report", "--in", str(tmp_path / "empty")]) == 2
    with pytest.raises(SystemExit):
        main(["report", "--in", str(tmp_path), "--format", "xml"])
