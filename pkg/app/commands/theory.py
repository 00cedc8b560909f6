"""Handlers for the saddle-point, reduced, stability and free-entropy commands."""
from __future__ import annotations

import argparse
from typing import Any, Dict

import numpy as np

from app.commands.common import (
    EXIT_FAILED,
    EXIT_OK,
    add_common_arguments,
    add_model_arguments,
    checked_model,
    output_path,
    print_record,
    resolve,
    write_outputs,
)
from app.services.free_entropy import free_entropy_difference
from app.services.model_core import NonFiniteUpdate, StudentPrior
from app.services.reduced_solver import (
    ReducedConfig,
    bifurcation_scan,
    solve_binary_nishimori,
    solve_binary_psb,
    solve_gaussian_psb,
    solve_spurious,
    solve_spurious_gaussian,
)
from app.services.saddle_solver import InitialCondition, SolverConfig, initial_state, solve
from app.services.stability import critical_load, wishart_critical_statistics
from app.services.sweeps import GridAxis, solve_status

SOLVE_DEFAULTS: Dict[str, Any] = {"init": {"kind": "near_diagonal"}}
REDUCED_DEFAULTS: Dict[str, Any] = {"system": "psb", "scan": None}
STABILITY_DEFAULTS: Dict[str, Any] = {"wishart_draws": 0, "inner_dim": 0}
FREE_ENTROPY_DEFAULTS: Dict[str, Any] = {"n_gaussian_samples": 10_000, "p_star": 2, "p": 3}


def _solver_config(resolved: Dict[str, Any]) -> SolverConfig:
    fields = {key: resolved[key] for key in SolverConfig.__dataclass_fields__ if resolved.get(key) is not None}
    return SolverConfig(**fields)


def _add_solver_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-gaussian-samples", type=int, default=None)
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--tolerance", type=float, default=None)
    parser.add_argument("--dt-order", type=float, default=None)
    parser.add_argument("--dt-conjugate", type=float, default=None)


def handle_solve(args: argparse.Namespace) -> int:
    resolved = resolve(args, "solve", SOLVE_DEFAULTS)
    checked = checked_model(resolved)
    h = checked.hyper
    init_payload = resolved["init"]
    if isinstance(init_payload, str):
        init_payload = {"kind": init_payload}
    init = InitialCondition.from_dict(init_payload)
    record: Dict[str, Any] = {"alpha": h.alpha, "beta": h.beta, "beta_star": h.beta_star}
    try:
        result = solve(h, checked.q_matrix, _solver_config(resolved), initial_state(init, h.p_star, h.p, h.student_prior))
    except NonFiniteUpdate as exc:
        record["status"] = "diverged"
        print_record(record)
        write_outputs("solve", [record], output_path(args, "solve"), resolved)
        print(f"diverged at iteration {exc.iteration}")
        return EXIT_FAILED
    record.update(result.state.flat())
    record["residual"] = float(result.residual_trace[-1])
    record["iterations"] = result.iterations
    record["stop_reason"] = result.stop_reason.value
    record["status"] = solve_status(result)
    write_outputs("solve", [record], output_path(args, "solve"), resolved)
    print_record(record)
    return EXIT_OK


def handle_reduced(args: argparse.Namespace) -> int:
    resolved = resolve(args, "reduced", REDUCED_DEFAULTS)
    beta_star, beta, alpha = float(resolved["beta_star"]), float(resolved["beta"]), float(resolved["alpha"])
    cfg = ReducedConfig(**{key: resolved[key] for key in ReducedConfig.__dataclass_fields__ if key in resolved})
    prior = StudentPrior(resolved["student_prior"])
    if resolved.get("scan"):
        alphas = GridAxis.parse(f"alpha={resolved['scan']}").values
        frame = bifurcation_scan(beta_star, beta, alphas, prior, cfg)
        write_outputs("reduced", frame.to_dict("records"), output_path(args, "reduced"), resolved)
        print(frame.to_string(index=False))
        return EXIT_OK

    system = resolved["system"]
    if system == "nishimori":
        solution = solve_binary_nishimori(beta, alpha, cfg)
    elif system == "spurious":
        spurious = (solve_spurious if prior is StudentPrior.BINARY_UNIFORM else solve_spurious_gaussian)(beta, alpha, cfg)
        record = {"alpha": alpha, "g": spurious.g, "g_hat": spurious.g_hat, "converged": spurious.converged}
        write_outputs("reduced", [record], output_path(args, "reduced"), resolved)
        print_record(record)
        return EXIT_OK
    elif prior is StudentPrior.STANDARD_GAUSSIAN:
        solution = solve_gaussian_psb(beta_star, beta, alpha, cfg)
    else:
        solution = solve_binary_psb(beta_star, beta, alpha, cfg)
    record = {
        "alpha": alpha,
        "m": solution.m,
        "q": solution.q,
        "m_hat": solution.m_hat,
        "q_hat": solution.q_hat,
        "converged": solution.converged,
    }
    write_outputs("reduced", [record], output_path(args, "reduced"), resolved)
    print_record(record)
    return EXIT_OK


def handle_stability(args: argparse.Namespace) -> int:
    resolved = resolve(args, "stability", STABILITY_DEFAULTS)
    checked = checked_model(resolved)
    h = checked.hyper
    report = critical_load(checked.q_matrix, h.beta_star, h.beta)
    record: Dict[str, Any] = {"alpha_crit": report.alpha_crit, "lambda_max": report.lambda_max}
    if h.p_star > 1:
        record["d"] = float(report.r_matrix[0, 1])
    draws = int(resolved.get("wishart_draws") or 0)
    if draws:
        stats = wishart_critical_statistics(
            float(resolved.get("c") or 0.0),
            h.p_star,
            h.beta_star,
            h.beta,
            draws,
            np.random.default_rng(int(resolved["seed"])),
            int(resolved.get("inner_dim") or 0),
        )
        record.update(
            {
                "wishart_mean_alpha_crit": stats.mean_alpha_crit,
                "wishart_harmonic_lambda_max": stats.harmonic_lambda_max,
                "wishart_stderr": stats.alpha_crit_stderr,
            }
        )
    write_outputs("stability", [record], output_path(args, "stability"), resolved)
    print_record(record)
    return EXIT_OK


def handle_free_entropy(args: argparse.Namespace) -> int:
    """Solve from a PSB and a partial-PSB start and compare their free entropies."""

    resolved = resolve(args, "free-entropy", FREE_ENTROPY_DEFAULTS)
    checked = checked_model(resolved)
    h = checked.hyper
    cfg = _solver_config(resolved)
    psb = solve(h, checked.q_matrix, cfg, initial_state(InitialCondition.near_diagonal(), h.p_star, h.p, h.student_prior))
    partial = solve(
        h,
        checked.q_matrix,
        cfg,
        initial_state(InitialCondition.partial_psb(h.p_star, h.p), h.p_star, h.p, h.student_prior),
    )
    difference = free_entropy_difference(
        psb.state, partial.state, h, checked.q_matrix, int(resolved["n_gaussian_samples"]), int(resolved["seed"])
    )
    record = {
        "alpha": h.alpha,
        "f_psb": difference.terms["first"],
        "f_partial_psb": difference.terms["second"],
        "difference": difference.value,
        "stderr": difference.stderr,
        "converged": psb.converged and partial.converged,
        "settled": psb.settled and partial.settled,
    }
    write_outputs("free-entropy", [record], output_path(args, "free-entropy"), resolved)
    print_record(record)
    return EXIT_OK


def register(subparsers: argparse._SubParsersAction) -> None:
    solve_parser = subparsers.add_parser("solve", help="iterate the full saddle-point equations")
    add_common_arguments(solve_parser)
    add_model_arguments(solve_parser)
    _add_solver_arguments(solve_parser)
    solve_parser.add_argument(
        "--init", choices=("paramagnetic", "near_diagonal", "off_diagonal", "random"), default=None
    )
    solve_parser.set_defaults(handler=handle_solve)

    reduced_parser = subparsers.add_parser("reduced", help="solve the scalar PSB equations")
    add_common_arguments(reduced_parser)
    add_model_arguments(reduced_parser)
    reduced_parser.add_argument("--system", choices=("psb", "nishimori", "spurious"), default=None)
    reduced_parser.add_argument("--scan", default=None, help="alpha range start:stop:count for a bifurcation scan")
    reduced_parser.set_defaults(handler=handle_reduced)

    stability_parser = subparsers.add_parser("stability", help="critical load of the paramagnetic solution")
    add_common_arguments(stability_parser)
    add_model_arguments(stability_parser)
    stability_parser.add_argument("--wishart-draws", type=int, default=None)
    stability_parser.add_argument("--inner-dim", type=int, default=None)
    stability_parser.set_defaults(handler=handle_stability)

    free_parser = subparsers.add_parser("free-entropy", help="free entropy of PSB against partial PSB")
    add_common_arguments(free_parser)
    add_model_arguments(free_parser)
    _add_solver_arguments(free_parser)
    free_parser.set_defaults(handler=handle_free_entropy)
