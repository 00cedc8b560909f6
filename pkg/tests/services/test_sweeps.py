import json

import numpy as np
import pandas as pd
import pytest

from app.config import ConfigParseError
from app.services.sweeps import (
    STATUS_FAILED,
    STATUS_OK,
    STATUS_PLATEAU,
    STATUS_UNCONVERGED,
    GridAxis,
    any_failing,
    covariance_for,
    emit_csv,
    evaluate_point,
    grid_points,
    parse_grid,
    point_hyperparameters,
    point_seed,
    run_grid,
    solve_status,
    write_manifest,
)
from app.services.saddle_solver import SolveResult, StopReason

REDUCED_BASE = {
    "beta_star": 1.0,
    "beta": 1.0,
    "alpha": 1.0,
    "p_star": 1,
    "p": 1,
    "solver": "reduced",
}


def _echo(task):
    return {"index": task["index"], "seed": task["seed"], **task["point"], "status": STATUS_OK}


def test_grid_axis_is_an_inclusive_linspace():
    axis = GridAxis.parse("alpha=0:1:3")

    assert axis.name == "alpha"
    assert axis.values == (0.0, 0.5, 1.0)
    assert GridAxis.parse("beta-star=2").values == (2.0,)
    assert GridAxis.parse("beta-star=2").name == "beta_star"


@pytest.mark.parametrize("text", ["alpha", "alpha=1:2", "alpha=a:b:3", "alpha=0:1:0", "=1"])
def test_malformed_axes_are_rejected(text):
    with pytest.raises(ConfigParseError):
        GridAxis.parse(text)


def test_repeated_axis_names_are_rejected():
    with pytest.raises(ConfigParseError):
        parse_grid("alpha=0:1:2,alpha=2")


def test_grid_points_are_row_major():
    points = grid_points(parse_grid("alpha=0:1:2,T=0.5:1:2"))

    assert points == [
        {"alpha": 0.0, "T": 0.5},
        {"alpha": 0.0, "T": 1.0},
        {"alpha": 1.0, "T": 0.5},
        {"alpha": 1.0, "T": 1.0},
    ]


def test_point_seeds_do_not_depend_on_grid_size():
    small = run_grid(grid_points(parse_grid("alpha=0:1:2")), {}, 42, evaluate=_echo)
    large = run_grid(grid_points(parse_grid("alpha=0:1:5")), {}, 42, evaluate=_echo)

    assert [r["seed"] for r in small] == [point_seed(42, 0), point_seed(42, 1)]
    assert small[0]["seed"] == large[0]["seed"]
    assert point_seed(42, 0) != point_seed(42, 1)
    assert point_seed(42, 0) != point_seed(43, 0)


def test_parallel_grid_keeps_point_order():
    points = grid_points(parse_grid("alpha=0.5:2:3"))

    serial = run_grid(points, REDUCED_BASE, 0, workers=1)
    parallel = run_grid(points, REDUCED_BASE, 0, workers=2)

    assert [r["alpha"] for r in parallel] == [0.5, 1.25, 2.0]
    assert [r["m"] for r in parallel] == [r["m"] for r in serial]
    assert parallel[0]["m"] < 1e-4 < parallel[2]["m"]


def test_invalid_point_becomes_failed_status():
    record = evaluate_point({"base": REDUCED_BASE, "point": {"alpha": -1.0}, "index": 0, "seed": 1})

    assert record["status"] == STATUS_FAILED
    assert any_failing([record])


@pytest.mark.parametrize(
    "override", [{"student_prior": "cauchy"}, {"p_star": None}], ids=["unknown-prior", "missing-count"]
)
def test_malformed_base_settings_become_failed_status(override):
    record = evaluate_point({"base": {**REDUCED_BASE, **override}, "point": {}, "index": 0, "seed": 1})

    assert record["status"] == STATUS_FAILED


def test_unknown_axis_name_is_rejected_up_front():
    with pytest.raises(ConfigParseError, match="Unknown grid axes"):
        parse_grid("alpha=0:1:3,gamma=0.5")


@pytest.mark.parametrize("text", ["c=0:0.5:3", "p=2", "alpha=0:1:3,p_star=2"])
def test_reduced_solver_rejects_pattern_axes(text):
    with pytest.raises(ConfigParseError, match="reduced solver"):
        parse_grid(text, solver="reduced")

    assert parse_grid(text, solver="full")


def test_full_solver_point_echoes_correlation():
    base = {
        **REDUCED_BASE,
        "solver": "full",
        "alpha": 0.0,
        "p_star": 2,
        "p": 2,
        "c": 0.3,
        "n_gaussian_samples": 100,
        "max_iters": 5,
        "init": {"kind": "paramagnetic"},
    }

    from_base = evaluate_point({"base": base, "point": {}, "index": 0, "seed": 2})
    from_axis = evaluate_point({"base": base, "point": {"c": 0.6}, "index": 1, "seed": 2})

    assert from_base["c"] == 0.3
    assert from_axis["c"] == 0.6


def _result(stop_reason, converged):
    return SolveResult(
        state=None,
        converged=converged,
        iterations=1,
        residual_trace=np.array([1.0]),
        imaginary_leakage=0.0,
        stop_reason=stop_reason,
    )


def test_solve_status_separates_plateau_from_tolerance():
    assert solve_status(_result(StopReason.TOLERANCE, True)) == STATUS_OK
    assert solve_status(_result(StopReason.PLATEAU, False)) == STATUS_PLATEAU
    assert solve_status(_result(StopReason.MAX_ITERS, False)) == STATUS_UNCONVERGED


def test_plateau_point_is_not_reported_ok():
    base = {
        **REDUCED_BASE,
        "solver": "full",
        "beta_star": 1.2,
        "beta": 1.2,
        "alpha": 2.0,
        "n_gaussian_samples": 200,
        "max_iters": 400,
        "average_window": 20,
        "init": {"kind": "paramagnetic"},
    }

    record = evaluate_point({"base": base, "point": {}, "index": 0, "seed": 0})

    assert record["status"] == STATUS_PLATEAU
    assert record["residual"] > 1e-6


def test_full_solver_point_reports_state_columns():
    base = {
        **REDUCED_BASE,
        "solver": "full",
        "alpha": 0.0,
        "n_gaussian_samples": 100,
        "max_iters": 5,
        "init": {"kind": "paramagnetic"},
    }

    record = evaluate_point({"base": base, "point": {}, "index": 3, "seed": 9})

    assert record["status"] == STATUS_OK
    assert record["m_0_0"] == pytest.approx(0.0, abs=1e-12)
    assert record["iterations"] == 1
    assert record["seed"] == 9


def test_temperature_axis_with_nishimori_ties_both_temperatures():
    h = point_hyperparameters({**REDUCED_BASE, "nishimori": True}, {"T": 0.5})

    assert h.beta == 2.0
    assert h.beta_star == 2.0

    h = point_hyperparameters({**REDUCED_BASE, "beta_star": 3.0, "nishimori": True}, {})
    assert h.beta == 3.0


def test_covariance_for_uses_uniform_correlation_when_given():
    assert covariance_for({}, {"c": 0.3}, 2).realize()[0, 1] == 0.3
    np.testing.assert_array_equal(covariance_for({"c": None}, {}, 2).realize(), np.eye(2))


def test_emit_csv_orders_rows_and_marks_missing_values(tmp_path):
    records = [
        {"index": 1, "alpha": 0.5, "status": "ok", "m": 0.25},
        {"index": 0, "alpha": 0.0, "status": "failed"},
    ]

    path = emit_csv(records, tmp_path / "out" / "sweep.csv")
    text = path.read_text()
    frame = pd.read_csv(path)

    assert text.splitlines()[0] == "index,alpha,m,status"
    assert "nan" in text
    assert list(frame["index"]) == [0, 1]


def test_emit_csv_writes_header_for_given_columns(tmp_path):
    path = emit_csv([], tmp_path / "empty.csv", columns=["alpha", "status"])

    assert path.read_text().strip() == "alpha,status"


def test_write_manifest_records_seeds_and_versions(tmp_path):
    path = write_manifest(tmp_path / "run.manifest.json", "sweep", {"grid": "alpha=0:1:2"}, [1, 2])
    payload = json.loads(path.read_text())

    assert payload["command"] == "sweep"
    assert payload["seeds"] == [1, 2]
    assert set(payload["versions"]) == {"numpy", "scipy", "pandas"}
    assert "created_at" in payload
