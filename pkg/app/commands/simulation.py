"""Handlers for the Monte Carlo simulation and lottery commands."""
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
from app.services.lottery import LotteryConfig, run_lottery_experiment
from app.services.mc_simulator import SimulationConfig, simulate
from app.services.model_core import DivergedTrajectory

SIMULATE_DEFAULTS: Dict[str, Any] = {"n": 512, "mc_sweeps": 200, "gibbs_sweeps": 200, "measure_window": 50}
LOTTERY_DEFAULTS: Dict[str, Any] = {"n": 512, "p": 8, "p_star": 4, "beta_star": 4.0, "beta": 4.0}


def handle_simulate(args: argparse.Namespace) -> int:
    resolved = resolve(args, "simulate", SIMULATE_DEFAULTS)
    checked = checked_model(resolved)
    cfg = SimulationConfig.from_dict(resolved)
    try:
        outcome = simulate(checked.hyper, checked.q_matrix, cfg)
    except DivergedTrajectory as exc:
        print(f"diverged: {exc}")
        write_outputs("simulate", [{"status": "diverged"}], output_path(args, "simulate"), resolved)
        return EXIT_FAILED
    trace = outcome.result.trace
    write_outputs("simulate", trace.to_frame().to_dict("records"), output_path(args, "simulate"), resolved)
    print_record({"alpha": checked.hyper.alpha, **outcome.record(cfg.measure_window)})
    return EXIT_OK


def handle_lottery(args: argparse.Namespace) -> int:
    resolved = resolve(args, "lottery", LOTTERY_DEFAULTS)
    cfg = LotteryConfig.from_dict(resolved)
    try:
        result = run_lottery_experiment(cfg, np.random.default_rng(cfg.seed))
    except DivergedTrajectory as exc:
        print(f"diverged: {exc}")
        return EXIT_FAILED
    write_outputs("lottery", result.records.to_dict("records"), output_path(args, "lottery"), resolved)
    write_outputs("lottery", result.summary.to_dict("records"), output_path(args, "lottery", "_summary"), resolved)
    print(result.summary.to_string(index=False))
    return EXIT_OK


def register(subparsers: argparse._SubParsersAction) -> None:
    simulate_parser = subparsers.add_parser("simulate", help="finite-N teacher data and student sampling")
    add_common_arguments(simulate_parser)
    add_model_arguments(simulate_parser)
    simulate_parser.add_argument("--n", type=int, default=None)
    simulate_parser.add_argument("--m", type=int, default=None, help="sample count; defaults to round(alpha N)")
    simulate_parser.add_argument("--mc-sweeps", type=int, default=None)
    simulate_parser.add_argument("--gibbs-sweeps", type=int, default=None)
    simulate_parser.add_argument("--external-field", type=float, default=None)
    simulate_parser.add_argument("--measure-window", type=int, default=None)
    simulate_parser.set_defaults(handler=handle_simulate)

    lottery_parser = subparsers.add_parser("lottery", help="pruned-and-rewound students against fresh ones")
    add_common_arguments(lottery_parser)
    add_model_arguments(lottery_parser)
    lottery_parser.add_argument("--n", type=int, default=None)
    lottery_parser.add_argument("--epochs", type=int, default=None)
    lottery_parser.add_argument("--pretrain-epochs", type=int, default=None)
    lottery_parser.set_defaults(handler=handle_lottery)
