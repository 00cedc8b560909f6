"""Parameter grids, parallel execution and ordered CSV output."""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from app.config import ConfigParseError, save_json
from app.services.model_core import (
    CovarianceSpec,
    DivergedTrajectory,
    Hyperparameters,
    ModelError,
    NonFiniteUpdate,
    StudentPrior,
    validate,
)
from app.services.reduced_solver import ReducedConfig, solve_binary_psb, solve_gaussian_psb
from app.services.saddle_solver import InitialCondition, SolveResult, SolverConfig, StopReason, initial_state, solve
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)

FLOAT_FORMAT = "%.12g"
STATUS_OK = "ok"
STATUS_PLATEAU = "plateau"
STATUS_UNCONVERGED = "unconverged"
STATUS_DIVERGED = "diverged"
STATUS_FAILED = "failed"
FAILING_STATUSES = (STATUS_DIVERGED, STATUS_FAILED)
GRID_AXIS_NAMES = ("alpha", "beta", "beta_star", "c", "p", "p_star", "T")
# The reduced PSB system is scalar: it has no pattern counts and no correlation.
REDUCED_FIXED_AXES = ("c", "p", "p_star")


@dataclass(frozen=True)
class GridAxis:
    name: str
    values: tuple

    @classmethod
    def parse(cls, text: str) -> "GridAxis":
        """``name=start:stop:count`` (inclusive linspace) or ``name=value``."""

        name, sep, spec = text.partition("=")
        name = name.strip().replace("-", "_")
        if not sep or not name:
            raise ConfigParseError(f"Grid axis '{text}' must look like name=start:stop:count")
        parts = spec.split(":")
        try:
            if len(parts) == 1:
                values = (float(parts[0]),)
            elif len(parts) == 3:
                count = int(parts[2])
                if count < 1:
                    raise ConfigParseError(f"Grid axis '{name}' needs a positive point count")
                values = tuple(float(v) for v in np.linspace(float(parts[0]), float(parts[1]), count))
            else:
                raise ConfigParseError(f"Grid axis '{text}' must look like name=start:stop:count")
        except ValueError as exc:
            raise ConfigParseError(f"Cannot parse grid axis '{text}': {exc}") from exc
        return cls(name=name, values=values)


def parse_grid(text: str, solver: str = "full") -> List[GridAxis]:
    axes = [GridAxis.parse(chunk) for chunk in text.split(",") if chunk.strip()]
    names = [axis.name for axis in axes]
    if len(set(names)) != len(names):
        raise ConfigParseError(f"Grid axes repeat a name: {names}")
    unknown = [name for name in names if name not in GRID_AXIS_NAMES]
    if unknown:
        raise ConfigParseError(f"Unknown grid axes {unknown}; choose from {list(GRID_AXIS_NAMES)}")
    if solver == "reduced":
        fixed = [name for name in names if name in REDUCED_FIXED_AXES]
        if fixed:
            raise ConfigParseError(f"The reduced solver cannot sweep {fixed}")
    return axes


def grid_points(axes: Sequence[GridAxis]) -> List[Dict[str, float]]:
    """Cartesian product in row-major order: the first axis varies slowest."""

    names = [axis.name for axis in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(axis.values for axis in axes))]


def point_seed(master_seed: int, index: int) -> int:
    """Seed of grid point ``index``; independent of how many points the grid has."""

    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


# ----------------------------------------------------------------------
# Grid point evaluation
# ----------------------------------------------------------------------
def point_hyperparameters(base: Mapping[str, Any], point: Mapping[str, float]) -> Hyperparameters:
    """Apply a grid point to the base settings.

    ``T`` sets the student temperature, or both temperatures with ``nishimori``.
    """

    merged: Dict[str, Any] = {**base, **point}
    if "T" in point:
        temperature = float(point["T"])
        if temperature <= 0:
            raise ModelError(f"temperature must be > 0, got {temperature}")
        merged["beta"] = 1.0 / temperature
        if base.get("nishimori"):
            merged["beta_star"] = 1.0 / temperature
    elif base.get("nishimori"):
        merged["beta"] = merged["beta_star"]
    return Hyperparameters.from_dict(merged)


def covariance_for(base: Mapping[str, Any], point: Mapping[str, float], p_star: int) -> CovarianceSpec:
    payload = dict(base.get("covariance") or {})
    c = point.get("c", base.get("c"))
    if c is not None:
        payload.setdefault("kind", "uniform")
        payload["c"] = float(c)
    return CovarianceSpec.from_dict(payload, p_star)


def solve_status(result: SolveResult) -> str:
    """``ok`` below tolerance, ``plateau`` at the noise floor, else ``unconverged``."""

    if result.converged:
        return STATUS_OK
    if result.stop_reason is StopReason.PLATEAU:
        return STATUS_PLATEAU
    return STATUS_UNCONVERGED


def _solve_full(h: Hyperparameters, q_matrix: np.ndarray, base: Mapping[str, Any], seed: int) -> Dict[str, Any]:
    solver_fields = {key: base[key] for key in SolverConfig.__dataclass_fields__ if key in base and key != "seed"}
    cfg = SolverConfig(seed=seed, **solver_fields)
    init = InitialCondition.from_dict(base.get("init") or {"kind": "near_diagonal"})
    result = solve(h, q_matrix, cfg, initial_state(init, h.p_star, h.p, h.student_prior))
    record: Dict[str, Any] = dict(result.state.flat())
    record["residual"] = float(result.residual_trace[-1]) if result.residual_trace.size else float("nan")
    record["iterations"] = result.iterations
    record["imaginary_leakage"] = result.imaginary_leakage
    record["status"] = solve_status(result)
    return record


def _solve_reduced(h: Hyperparameters, base: Mapping[str, Any]) -> Dict[str, Any]:
    cfg = ReducedConfig(**{key: base[key] for key in ReducedConfig.__dataclass_fields__ if key in base})
    solver = solve_binary_psb if h.student_prior is StudentPrior.BINARY_UNIFORM else solve_gaussian_psb
    solution = solver(h.beta_star, h.beta, h.alpha, cfg)
    return {
        "m": solution.m,
        "q": solution.q,
        "m_hat": solution.m_hat,
        "q_hat": solution.q_hat,
        "iterations": solution.iterations,
        "status": STATUS_OK if solution.converged else STATUS_UNCONVERGED,
    }


def evaluate_point(task: Dict[str, Any]) -> Dict[str, Any]:
    """Run one grid point; failures become a status, never an exception."""

    base, point, index, seed = task["base"], task["point"], task["index"], task["seed"]
    record: Dict[str, Any] = {"index": index, **point}
    try:
        h = point_hyperparameters(base, point)
        record.update({"beta": h.beta, "beta_star": h.beta_star, "p": h.p, "p_star": h.p_star})
        if base.get("solver", "full") == "reduced":
            record.update(_solve_reduced(h, base))
        else:
            c = point.get("c", base.get("c"))
            if c is not None:
                record["c"] = float(c)
            checked = validate(h, covariance_for(base, point, h.p_star))
            record.update(_solve_full(h, checked.q_matrix, base, seed))
    except (NonFiniteUpdate, DivergedTrajectory) as exc:
        record["status"] = STATUS_DIVERGED
        LOGGER.warning("grid_point_failed", extra={"telemetry": {"index": index, "error": str(exc)}})
    except (ModelError, np.linalg.LinAlgError) as exc:
        record["status"] = STATUS_FAILED
        LOGGER.warning("grid_point_failed", extra={"telemetry": {"index": index, "error": str(exc)}})
    except (ValueError, TypeError) as exc:
        record["status"] = STATUS_FAILED
        LOGGER.warning("grid_point_rejected", extra={"telemetry": {"index": index, "error": repr(exc)}})
    record["seed"] = seed
    return record


def run_grid(
    points: Sequence[Mapping[str, float]],
    base: Mapping[str, Any],
    master_seed: int,
    workers: int = 1,
    evaluate: Callable[[Dict[str, Any]], Dict[str, Any]] = evaluate_point,
) -> List[Dict[str, Any]]:
    """Evaluate every point and return records in grid order."""

    tasks = [
        {"base": dict(base), "point": dict(point), "index": index, "seed": point_seed(master_seed, index)}
        for index, point in enumerate(points)
    ]
    if workers <= 1 or len(tasks) <= 1:
        records = [evaluate(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(evaluate, tasks))
    failing = sum(1 for record in records if record.get("status") in FAILING_STATUSES)
    LOGGER.info(
        "sweep_finished", extra={"telemetry": {"points": len(records), "failing": failing, "workers": workers}}
    )
    return records


# ----------------------------------------------------------------------
# Output
# ----------------------------------------------------------------------
def _columns(records: Iterable[Mapping[str, Any]]) -> List[str]:
    columns: Dict[str, None] = {}
    for record in records:
        for key in record:
            columns.setdefault(key, None)
    if "status" in columns:
        columns.pop("status")
        columns["status"] = None
    return list(columns)


def emit_csv(records: Sequence[Mapping[str, Any]], path: Path, columns: Optional[Sequence[str]] = None) -> Path:
    """Write records in the given order; missing values print as ``nan``."""

    ordered = sorted(records, key=lambda record: record.get("index", 0)) if records and "index" in records[0] else list(records)
    frame = pd.DataFrame.from_records(ordered, columns=list(columns) if columns else _columns(ordered))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan")
    return path


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in ("numpy", "scipy", "pandas"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(path: Path, command: str, config: Mapping[str, Any], seeds: Sequence[int]) -> Path:
    save_json(
        path,
        {
            "command": command,
            "config": dict(config),
            "seeds": list(seeds),
            "versions": package_versions(),
            "created_at": datetime.now(timezone.utc).isoformat(),
        },
    )
    return path


def any_failing(records: Iterable[Mapping[str, Any]]) -> bool:
    return any(record.get("status") in FAILING_STATUSES for record in records)
