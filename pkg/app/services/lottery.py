"""Lottery-ticket experiment: pruned-and-rewound students against fresh ones."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd

from app.services.mc_simulator import (
    LangevinConfig,
    SimulationConfig,
    generate_teacher_data,
    magnitude_prune,
    train_student_gaussian,
)
from app.services.model_core import ParameterOutOfRange, PatternMatrix, PatternPrior
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)


@dataclass(frozen=True)
class LotteryConfig:
    n: int = 512
    p: int = 8
    p_star: int = 4
    beta_star: float = 4.0
    beta: float = 4.0
    alphas: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    pretrain_epochs: int = 400
    epochs: int = 400
    gibbs_sweeps: int = 200
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.p_star <= self.p:
            raise ParameterOutOfRange(f"lottery needs 1 <= P* <= P, got P*={self.p_star}, P={self.p}")
        if not self.alphas:
            raise ParameterOutOfRange("lottery needs at least one alpha")

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "LotteryConfig":
        defaults = cls()
        return cls(
            n=int(payload.get("n", defaults.n)),
            p=int(payload.get("p", defaults.p)),
            p_star=int(payload.get("p_star", defaults.p_star)),
            beta_star=float(payload.get("beta_star", defaults.beta_star)),
            beta=float(payload.get("beta", defaults.beta)),
            alphas=tuple(float(a) for a in payload.get("alphas", defaults.alphas)),
            pretrain_epochs=int(payload.get("pretrain_epochs", defaults.pretrain_epochs)),
            epochs=int(payload.get("epochs", defaults.epochs)),
            gibbs_sweeps=int(payload.get("gibbs_sweeps", defaults.gibbs_sweeps)),
            langevin=LangevinConfig(**payload.get("langevin", {})),
            seed=int(payload.get("seed", defaults.seed)),
        )

    def simulation(self, epochs: int) -> SimulationConfig:
        return SimulationConfig(
            n=self.n, gibbs_sweeps=self.gibbs_sweeps, mc_sweeps=epochs, langevin=self.langevin, seed=self.seed
        )


@dataclass(frozen=True, eq=False)
class LotteryResult:
    records: pd.DataFrame
    summary: pd.DataFrame


def _run_single_alpha(cfg: LotteryConfig, alpha: float, rng: np.random.Generator) -> pd.DataFrame:
    teacher = PatternMatrix(rng.standard_normal((cfg.p_star, cfg.n)), PatternPrior.REAL)
    samples = int(round(alpha * cfg.n))
    dataset = generate_teacher_data(teacher, cfg.beta_star, samples, cfg.n, cfg.simulation(0), rng)

    original_init = PatternMatrix(rng.standard_normal((cfg.p, cfg.n)), PatternPrior.REAL)
    original = train_student_gaussian(
        dataset, cfg.beta, cfg.p, original_init, cfg.simulation(cfg.pretrain_epochs), rng, teacher
    )
    ticket = magnitude_prune(original.patterns, original_init, cfg.p_star)
    fresh = PatternMatrix(rng.standard_normal((cfg.p_star, cfg.n)), PatternPrior.REAL)

    run_cfg = cfg.simulation(cfg.epochs)
    student_a = train_student_gaussian(dataset, cfg.beta, cfg.p_star, fresh, run_cfg, rng, teacher)
    student_b = train_student_gaussian(dataset, cfg.beta, cfg.p_star, ticket, run_cfg, rng, teacher)

    # Epoch 0 is the untrained initialization.
    m_a = np.concatenate([[_best_match(fresh, teacher)], student_a.trace.best_match()])
    m_b = np.concatenate([[_best_match(ticket, teacher)], student_b.trace.best_match()])
    return pd.DataFrame(
        {"alpha": alpha, "epoch": np.arange(m_a.shape[0]), "m_A": m_a, "m_B": m_b, "diff": m_b - m_a}
    )


def _best_match(xi: PatternMatrix, teacher: PatternMatrix) -> float:
    overlaps = teacher.values @ xi.values.T / teacher.n
    return float(np.abs(overlaps).max(axis=1).mean())


def summarize(records: pd.DataFrame) -> pd.DataFrame:
    """Median over α of m_B − m_A per epoch and the mean absolute deviation around it."""

    grouped = records.groupby("epoch")["diff"]
    median = grouped.median()
    mad = grouped.agg(lambda x: (x - x.median()).abs().mean())
    return pd.DataFrame({"epoch": median.index, "median_diff": median.values, "mad": mad.values})


def run_lottery_experiment(cfg: LotteryConfig, rng: np.random.Generator) -> LotteryResult:
    """Train O, prune it to B, train A (fresh) and B side by side at every α."""

    frames: List[pd.DataFrame] = []
    for index, alpha in enumerate(cfg.alphas):
        child = np.random.default_rng([int(rng.integers(0, 2**32)), index])
        frames.append(_run_single_alpha(replace(cfg, seed=int(cfg.seed) + index), float(alpha), child))
        LOGGER.info("Lottery point alpha=%s finished", alpha)
    records = pd.concat(frames, ignore_index=True)
    summary = summarize(records)
    LOGGER.info(
        "lottery_finished",
        extra={"telemetry": {"alphas": list(cfg.alphas), "peak_median": float(summary["median_diff"].max())}},
    )
    return LotteryResult(records=records, summary=summary)
