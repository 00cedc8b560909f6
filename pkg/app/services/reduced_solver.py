"""Scalar saddle-point systems left after permutation symmetry breaking.

Under the one-to-one ansatz every student unit decouples, so the matrix
equations collapse to a handful of scalars. All Gaussian expectations use a
Gauss–Hermite rule, which keeps the maps deterministic and smooth enough to
locate the onset of learning.

The q̂ line evaluates tanh²(β² m + β√q z) while m̂ evaluates
tanh(β*β m + β√q z). Both coincide on β = β*; off that line the reduced
q̂ is compared against the full solver, which uses β*β throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
import pandas as pd

from app.services.model_core import OrderParameterState, ParameterOutOfRange, StudentPrior
from app.utils.logger import get_logger
from app.utils.quadrature import DEFAULT_NODES, GaussHermiteRule, standard_normal_rule

LOGGER = get_logger(__name__)

WARM_START = 0.5
COLD_START = 1e-3


@dataclass(frozen=True)
class ReducedConfig:
    damping: float = 0.5
    tolerance: float = 1e-10
    max_iters: int = 100_000
    nodes: int = DEFAULT_NODES

    def rule(self) -> GaussHermiteRule:
        return standard_normal_rule(self.nodes)


@dataclass(frozen=True)
class PSBSolution:
    m: float
    q: float
    m_hat: float
    q_hat: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class SpuriousSolution:
    g: float
    g_hat: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class GaussianPSBSolution:
    m: float
    q: float
    g: float
    m_hat: float
    q_hat: float
    g_hat: float
    converged: bool
    iterations: int


def _root(value: float) -> float:
    return float(np.sqrt(max(value, 0.0)))


def _check(beta_star: float, beta: float, alpha: float) -> None:
    if beta_star <= 0 or beta <= 0:
        raise ParameterOutOfRange(f"Inverse temperatures must be > 0, got {beta_star}, {beta}")
    if alpha < 0:
        raise ParameterOutOfRange(f"alpha must be >= 0, got {alpha}")


def _iterate(
    update: Callable[[np.ndarray], np.ndarray], start: np.ndarray, cfg: ReducedConfig
) -> tuple[np.ndarray, bool, int]:
    current = np.asarray(start, dtype=np.float64)
    for iteration in range(1, cfg.max_iters + 1):
        target = update(current)
        proposal = current + cfg.damping * (target - current)
        change = float(np.max(np.abs(proposal - current)))
        current = proposal
        if not np.all(np.isfinite(current)):
            LOGGER.warning("Reduced iteration produced non-finite values at step %d", iteration)
            return current, False, iteration
        if change <= cfg.tolerance:
            return current, True, iteration
    LOGGER.warning("Reduced iteration did not converge in %d steps", cfg.max_iters)
    return current, False, cfg.max_iters


def _tanh_moments(rule: GaussHermiteRule, drift: float, spread: float) -> tuple[float, float]:
    values = np.tanh(drift + _root(spread) * rule.z)
    return float(rule.w @ values), float(rule.w @ values**2)


def _conjugate_update(
    rule: GaussHermiteRule, beta_star: float, beta: float, alpha: float, m: float, q: float
) -> tuple[float, float]:
    m_hat = beta_star * beta * alpha * float(rule.w @ np.tanh(beta_star * beta * m + beta * _root(q) * rule.z))
    q_hat = beta**2 * alpha * float(rule.w @ np.tanh(beta**2 * m + beta * _root(q) * rule.z) ** 2)
    return m_hat, q_hat


def solve_binary_psb(
    beta_star: float,
    beta: float,
    alpha: float,
    cfg: ReducedConfig = ReducedConfig(),
    start: float = WARM_START,
) -> PSBSolution:
    """Binary student patterns, one-to-one with the teacher."""

    _check(beta_star, beta, alpha)
    rule = cfg.rule()

    def update(x: np.ndarray) -> np.ndarray:
        m, q, m_hat, q_hat = x
        new_m_hat, new_q_hat = _conjugate_update(rule, beta_star, beta, alpha, m, q)
        new_m, new_q = _tanh_moments(rule, m_hat, q_hat)
        return np.array([new_m, new_q, new_m_hat, new_q_hat])

    x, converged, iterations = _iterate(update, np.full(4, start), cfg)
    LOGGER.debug("reduced_finished", extra={"telemetry": {"system": "binary_psb", "alpha": alpha, "m": x[0]}})
    return PSBSolution(*map(float, x), converged=converged, iterations=iterations)


def solve_binary_nishimori(
    beta: float, alpha: float, cfg: ReducedConfig = ReducedConfig(), start: float = WARM_START
) -> PSBSolution:
    """β = β*: two scalars suffice because m = q and m̂ = q̂."""

    _check(beta, beta, alpha)
    rule = cfg.rule()

    def update(x: np.ndarray) -> np.ndarray:
        m, m_hat = x
        new_m_hat = beta**2 * alpha * float(rule.w @ np.tanh(beta**2 * m + beta * _root(m) * rule.z))
        new_m = float(rule.w @ np.tanh(m_hat + _root(m_hat) * rule.z))
        return np.array([new_m, new_m_hat])

    x, converged, iterations = _iterate(update, np.full(2, start), cfg)
    m, m_hat = map(float, x)
    return PSBSolution(m=m, q=m, m_hat=m_hat, q_hat=m_hat, converged=converged, iterations=iterations)


def _spurious_conjugate(rule: GaussHermiteRule, beta: float, alpha: float, g: float) -> float:
    return beta**2 * alpha * float(rule.w @ np.tanh(beta * _root(g) * rule.z) ** 2)


def solve_spurious(
    beta: float, alpha: float, cfg: ReducedConfig = ReducedConfig(), start: float = WARM_START
) -> SpuriousSolution:
    """Binary student unit with no teacher partner: g = E tanh²(√ĝ z)."""

    _check(beta, beta, alpha)
    rule = cfg.rule()

    def update(x: np.ndarray) -> np.ndarray:
        g, g_hat = x
        return np.array(
            [float(rule.w @ np.tanh(_root(g_hat) * rule.z) ** 2), _spurious_conjugate(rule, beta, alpha, g)]
        )

    x, converged, iterations = _iterate(update, np.full(2, start), cfg)
    return SpuriousSolution(g=float(x[0]), g_hat=float(x[1]), converged=converged, iterations=iterations)


def solve_spurious_gaussian(
    beta: float, alpha: float, cfg: ReducedConfig = ReducedConfig(), start: float = WARM_START
) -> SpuriousSolution:
    """Gaussian student unit with no teacher partner: g = ĝ/(1 + ĝ)²."""

    _check(beta, beta, alpha)
    rule = cfg.rule()

    def update(x: np.ndarray) -> np.ndarray:
        g, g_hat = x
        return np.array([g_hat / (1.0 + g_hat) ** 2, _spurious_conjugate(rule, beta, alpha, g)])

    x, converged, iterations = _iterate(update, np.full(2, start), cfg)
    return SpuriousSolution(g=float(x[0]), g_hat=float(x[1]), converged=converged, iterations=iterations)


def solve_gaussian_psb(
    beta_star: float,
    beta: float,
    alpha: float,
    cfg: ReducedConfig = ReducedConfig(),
    start: float = WARM_START,
) -> GaussianPSBSolution:
    """Standard-Gaussian student patterns: rational top block, same conjugates."""

    _check(beta_star, beta, alpha)
    rule = cfg.rule()

    def update(x: np.ndarray) -> np.ndarray:
        m, q, m_hat, q_hat = x
        new_m_hat, new_q_hat = _conjugate_update(rule, beta_star, beta, alpha, m, q)
        denominator = 1.0 + q_hat
        return np.array(
            [m_hat / denominator, (m_hat**2 + q_hat) / denominator**2, new_m_hat, new_q_hat]
        )

    x, converged, iterations = _iterate(update, np.full(4, start), cfg)
    spurious = solve_spurious_gaussian(beta, alpha, cfg, start)
    m, q, m_hat, q_hat = map(float, x)
    return GaussianPSBSolution(
        m=m,
        q=q,
        g=spurious.g,
        m_hat=m_hat,
        q_hat=q_hat,
        g_hat=spurious.g_hat,
        converged=converged and spurious.converged,
        iterations=max(iterations, spurious.iterations),
    )


def bifurcation_scan(
    beta_star: float,
    beta: float,
    alphas: Iterable[float],
    prior: StudentPrior = StudentPrior.BINARY_UNIFORM,
    cfg: ReducedConfig = ReducedConfig(),
    hysteresis_tolerance: float = 1e-6,
) -> pd.DataFrame:
    """Solve from a warm and a cold start at each load and report both branches."""

    solver = solve_binary_psb if prior is StudentPrior.BINARY_UNIFORM else solve_gaussian_psb
    rows = []
    for alpha in alphas:
        warm = solver(beta_star, beta, float(alpha), cfg, WARM_START)
        cold = solver(beta_star, beta, float(alpha), cfg, COLD_START)
        rows.append(
            {
                "alpha": float(alpha),
                "m_warm": warm.m,
                "q_warm": warm.q,
                "m_cold": cold.m,
                "q_cold": cold.q,
                "converged": warm.converged and cold.converged,
                "hysteresis": abs(warm.m - cold.m) > hysteresis_tolerance,
            }
        )
    return pd.DataFrame(rows, columns=["alpha", "m_warm", "q_warm", "m_cold", "q_cold", "converged", "hysteresis"])


def psb_state(
    m: float,
    q: float,
    m_hat: float,
    q_hat: float,
    p_star: int,
    p: int,
    prior: StudentPrior = StudentPrior.BINARY_UNIFORM,
    spurious: Optional[SpuriousSolution] = None,
) -> OrderParameterState:
    """Embed scalar PSB values into full matrices.

    The first min(P, P*) students pair with the teachers of the same index;
    any extra students carry the spurious overlap g.
    """

    if p > p_star and spurious is None:
        raise ParameterOutOfRange("P > P* needs a spurious solution for the unpaired students")
    paired = min(p, p_star)
    overlap = np.zeros((p_star, p))
    overlap_hat = np.zeros((p_star, p))
    overlap[np.arange(paired), np.arange(paired)] = m
    overlap_hat[np.arange(paired), np.arange(paired)] = m_hat
    q_diag = np.full(p, q)
    q_hat_diag = np.full(p, q_hat)
    if p > p_star:
        assert spurious is not None
        q_diag[p_star:] = spurious.g
        q_hat_diag[p_star:] = spurious.g_hat
    if prior is StudentPrior.BINARY_UNIFORM:
        s_diag = np.ones(p)
    else:
        s_diag = 1.0 / (1.0 + q_hat_diag) + q_diag
    return OrderParameterState(
        m=overlap,
        s=np.diag(s_diag),
        q=np.diag(q_diag),
        m_hat=overlap_hat,
        s_hat=np.zeros((p, p)),
        q_hat=np.diag(q_hat_diag),
    )
