"""Tests for the command-line entry point."""

import json

import pandas as pd
import pytest

from app.main import build_parser, main


def _printed(capsys):
    values = {}
    for line in capsys.readouterr().out.splitlines():
        key, sep, value = line.partition("=")
        if sep:
            values[key] = value
    return values


def test_stability_prints_critical_load(tmp_path, capsys):
    output = tmp_path / "stability.csv"

    code = main(["stability", "--c", "0.3", "--p-star", "2", "--beta-star", "1", "--beta", "1", "--output", str(output)])
    values = _printed(capsys)

    assert code == 0
    assert float(values["alpha_crit"]) == pytest.approx(0.59570, abs=1e-5)
    assert float(values["lambda_max"]) == pytest.approx(1.67871, abs=1e-5)
    assert pd.read_csv(output)["alpha_crit"].iloc[0] == pytest.approx(0.59570, abs=1e-5)
    manifest = json.loads(output.with_suffix(".manifest.json").read_text())
    assert manifest["command"] == "stability"
    assert manifest["config"]["c"] == 0.3


def test_stability_reads_config_file(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"stability": {"c": 0.3, "p-star": 2}}))

    code = main(["stability", "--config", str(config), "--output", str(tmp_path / "out.csv")])

    assert code == 0
    assert float(_printed(capsys)["alpha_crit"]) == pytest.approx(0.59570, abs=1e-5)


def test_reduced_learns_above_onset(tmp_path, capsys):
    code = main(
        ["reduced", "--beta-star", "1.2", "--beta", "1.2", "--alpha", "0.6", "--output", str(tmp_path / "r.csv")]
    )

    assert code == 0
    assert float(_printed(capsys)["m"]) > 0.1


def test_malformed_config_exits_with_one(tmp_path, capsys):
    config = tmp_path / "broken.json"
    config.write_text("{")

    assert main(["stability", "--config", str(config), "--output", str(tmp_path / "out.csv")]) == 1
    assert "config error" in capsys.readouterr().err


def test_invalid_parameters_exit_with_one(tmp_path, capsys):
    assert main(["stability", "--beta", "-1", "--output", str(tmp_path / "out.csv")]) == 1
    assert "beta must be > 0" in capsys.readouterr().err


def test_sweep_needs_a_grid(tmp_path):
    assert main(["sweep", "--output", str(tmp_path / "s.csv")]) == 1


def test_reduced_sweep_writes_rows_in_order(tmp_path):
    output = tmp_path / "sweep.csv"

    code = main(["sweep", "--solver", "reduced", "--grid", "alpha=0.5:2:3", "--seed", "5", "--output", str(output)])
    frame = pd.read_csv(output)
    manifest = json.loads(output.with_suffix(".manifest.json").read_text())

    assert code == 0
    assert list(frame["alpha"]) == [0.5, 1.25, 2.0]
    assert list(frame.columns)[-1] == "status"
    assert len(manifest["seeds"]) == 3


def test_failing_grid_points_exit_with_two(tmp_path):
    code = main(["sweep", "--solver", "reduced", "--grid", "alpha=-1:-0.5:2", "--output", str(tmp_path / "s.csv")])

    assert code == 2


@pytest.mark.parametrize(
    "arguments", [["--grid", "gamma=0:1:2"], ["--solver", "reduced", "--grid", "alpha=0.5:2:2,c=0:0.5:2"]]
)
def test_unusable_grid_axes_exit_with_one(tmp_path, arguments):
    assert main(["sweep", *arguments, "--output", str(tmp_path / "s.csv")]) == 1


def test_parser_knows_every_command():
    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices

    assert set(commands) == {
        "solve",
        "reduced",
        "stability",
        "free-entropy",
        "simulate",
        "lottery",
        "sweep",
        "validate",
    }
