"""Replica-symmetric free entropy at a given order-parameter state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from app.services.model_core import (
    Hyperparameters,
    OrderParameterState,
    StudentPrior,
    TeacherPrior,
    spin_configurations,
)
from app.services.pattern_sampling import gaussian_factor
from app.services.saddle_solver import orthant_weights, whitened_gaussian_samples
from app.services.spin_averages import (
    Conjugates,
    GaussianNoise,
    curie_weiss_distribution,
    gaussian_log_partition,
    gibbs_average,
    lc_hamiltonian,
    lo_hamiltonian,
    log_partition_M,
)
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)


@dataclass(frozen=True)
class FreeEntropyEstimate:
    value: float
    stderr: float
    terms: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, float]:
        return {"free_entropy": self.value, "stderr": self.stderr, **self.terms}


def coupling_term(state: OrderParameterState) -> float:
    """−Σ m m̂ − ½ Σ_{μ≠ν} s ŝ + ½ Σ q q̂ (ŝ has a zero diagonal)."""

    return float(
        -np.sum(state.m * state.m_hat) - 0.5 * np.sum(state.s * state.s_hat) + 0.5 * np.sum(state.q * state.q_hat)
    )


def _pattern_log_partition(
    conj: Conjugates,
    h: Hyperparameters,
    q_matrix: np.ndarray,
    noise: GaussianNoise,
    rng: np.random.Generator,
    orthant_samples: int,
) -> np.ndarray:
    """Per-sample E_{ξ*} Re log Z(L^C), shape (n,)."""

    def log_z(xi_star: np.ndarray) -> np.ndarray:
        if h.student_prior is StudentPrior.STANDARD_GAUSSIAN:
            return gaussian_log_partition(conj, xi_star, noise).real
        return gibbs_average(lc_hamiltonian(conj, xi_star, noise)).log_partition.real

    if h.teacher_prior is TeacherPrior.BINARY_ARCSINE:
        spins = spin_configurations(q_matrix.shape[0])
        weights = orthant_weights(q_matrix, orthant_samples)
        total = np.zeros(noise.count)
        for xi_star, weight in zip(spins, weights):
            if weight > 0.0:
                total += weight * log_z(xi_star)
        return total
    factor = gaussian_factor(q_matrix)
    xi_batch = (factor @ rng.standard_normal((q_matrix.shape[0], noise.count))).T
    return log_z(xi_batch)


def _hidden_log_partition(
    state: OrderParameterState, h: Hyperparameters, q_matrix: np.ndarray, noise: GaussianNoise
) -> np.ndarray:
    """Per-sample ⟨Re log Z(L^O)⟩_{M*}, shape (n,)."""

    total = np.zeros(noise.count)
    spins, probs = curie_weiss_distribution(h.beta_star, q_matrix)
    for tau_star, weight in zip(spins, probs):
        total += weight * gibbs_average(lo_hamiltonian(state, h, tau_star, noise)).log_partition.real
    return total


def _standard_error(samples: np.ndarray) -> float:
    n = samples.shape[0]
    if n % 2 == 0 and n >= 4:
        # Antithetic halves: sample i pairs with sample i + n/2.
        pairs = 0.5 * (samples[: n // 2] + samples[n // 2 :])
        return float(pairs.std(ddof=1) / np.sqrt(pairs.shape[0]))
    if n < 2:
        return float("nan")
    return float(samples.std(ddof=1) / np.sqrt(n))


def _evaluate(
    state: OrderParameterState,
    h: Hyperparameters,
    q_matrix: np.ndarray,
    noise: GaussianNoise,
    rng: np.random.Generator,
    orthant_samples: int,
) -> tuple[float, np.ndarray, Dict[str, float]]:
    conj = Conjugates.from_state(state)
    pattern = _pattern_log_partition(conj, h, q_matrix, noise, rng, orthant_samples)
    hidden = _hidden_log_partition(state, h, q_matrix, noise) if h.alpha > 0 else np.zeros(noise.count)
    log_m = log_partition_M(state.s, h.beta)
    coupling = coupling_term(state)
    terms = {
        "coupling": coupling,
        "pattern": float(pattern.mean()),
        "hidden": float(hidden.mean()),
        "log_z_m": log_m,
    }
    return coupling - h.alpha * log_m, pattern + h.alpha * hidden, terms


def free_entropy(
    state: OrderParameterState,
    h: Hyperparameters,
    q_matrix: np.ndarray,
    n_gaussian_samples: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[GaussianNoise] = None,
    orthant_samples: int = 1_000_000,
) -> FreeEntropyEstimate:
    """Evaluate the free entropy and its Monte Carlo standard error.

    Pass the same ``noise`` (or an identically seeded ``rng``) when comparing
    states so that the difference uses common random numbers. Binary
    partition functions are plain sums over ±1 spins, so the paramagnetic
    state at zero load gives P log 2.
    """

    rng = rng if rng is not None else np.random.default_rng(0)
    if noise is None:
        noise = whitened_gaussian_samples(n_gaussian_samples, state.p, rng)
    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    constant, samples, terms = _evaluate(state, h, q_matrix, noise, rng, orthant_samples)
    value = constant + float(np.sum(samples) / samples.shape[0])
    LOGGER.debug("free_entropy", extra={"telemetry": {"alpha": h.alpha, **terms}})
    return FreeEntropyEstimate(value=value, stderr=_standard_error(samples), terms=terms)


def free_entropy_difference(
    first: OrderParameterState,
    second: OrderParameterState,
    h: Hyperparameters,
    q_matrix: np.ndarray,
    n_gaussian_samples: int = 10_000,
    seed: int = 0,
    orthant_samples: int = 1_000_000,
) -> FreeEntropyEstimate:
    """f(first) − f(second) on one shared noise batch."""

    noise = whitened_gaussian_samples(n_gaussian_samples, first.p, np.random.default_rng(seed))
    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    const_first, samples_first, _ = _evaluate(first, h, q_matrix, noise, np.random.default_rng([seed, 1]), orthant_samples)
    const_second, samples_second, _ = _evaluate(second, h, q_matrix, noise, np.random.default_rng([seed, 1]), orthant_samples)
    paired = samples_first - samples_second
    f_first = const_first + float(samples_first.mean())
    f_second = const_second + float(samples_second.mean())
    return FreeEntropyEstimate(
        value=f_first - f_second,
        stderr=_standard_error(paired),
        terms={"first": f_first, "second": f_second},
    )
