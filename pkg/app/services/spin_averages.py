"""Thermal averages of the effective Hamiltonians.

Binary spins are handled by exhaustive enumeration of {-1, +1}^P, Gaussian
student patterns by their closed-form posterior. Energies are complex: the
noise amplitude A(q) is the principal square root of a possibly negative
number, and only the final Gaussian averages take real parts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from app.services.model_core import (
    DimensionMismatch,
    Hyperparameters,
    NonFiniteEnergy,
    OrderParameterState,
    SingularPrecision,
    check_enumeration,
    spin_configurations,
)
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)

CONDITION_LIMIT = 1e12
# Bound on n_samples × 2^P complex weights held in memory at once.
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class GaussianNoise:
    """A batch of P×P standard-normal matrices, shape (n, P, P)."""

    z: np.ndarray

    def __post_init__(self) -> None:
        if self.z.ndim != 3 or self.z.shape[1] != self.z.shape[2]:
            raise DimensionMismatch(f"Noise must have shape (n, P, P), got {self.z.shape}")

    @property
    def count(self) -> int:
        return int(self.z.shape[0])

    @property
    def p(self) -> int:
        return int(self.z.shape[1])

    def negated(self) -> "GaussianNoise":
        return GaussianNoise(-self.z)


class Conjugates(NamedTuple):
    m_hat: np.ndarray
    s_hat: np.ndarray
    q_hat: np.ndarray

    @classmethod
    def from_state(cls, state: OrderParameterState) -> "Conjugates":
        return cls(state.m_hat, state.s_hat, state.q_hat)


class QuadraticHamiltonian(NamedTuple):
    """E(x) = ½ xᵀ C x + x·(field + noise_field)."""

    coupling: np.ndarray
    field: np.ndarray
    noise_field: np.ndarray


class GibbsMoments(NamedTuple):
    mean: np.ndarray
    second: np.ndarray
    log_partition: np.ndarray


# ----------------------------------------------------------------------
# Effective fields
# ----------------------------------------------------------------------
def effective_field_matrix(q: np.ndarray) -> np.ndarray:
    """A(q) with A² = 2q − diag(row sums of q), as a complex matrix."""

    q = np.asarray(q, dtype=np.float64)
    radicand = 2.0 * q - np.diag(q.sum(axis=1))
    return np.sqrt(radicand.astype(np.complex128))


def noise_fields(q: np.ndarray, noise: GaussianNoise) -> np.ndarray:
    """Per-unit noise field Σ_ν A_μν (z_μν + z_νμ)/2, shape (n, P)."""

    amplitude = effective_field_matrix(q)
    if amplitude.shape[0] != noise.p:
        raise DimensionMismatch(f"Noise side {noise.p} differs from order parameter side {amplitude.shape[0]}")
    symmetric = 0.5 * (noise.z + np.transpose(noise.z, (0, 2, 1)))
    return np.einsum("mv,nmv->nm", amplitude, symmetric)


def gibbs_average(hamiltonian: QuadraticHamiltonian, spins: Optional[np.ndarray] = None) -> GibbsMoments:
    """Enumerate ±1 spins and return ⟨x⟩, ⟨xxᵀ⟩ and log Σ_x exp E(x) per sample."""

    coupling = np.asarray(hamiltonian.coupling)
    size = coupling.shape[0]
    if spins is None:
        spins = spin_configurations(size)
    noise_field = np.atleast_2d(hamiltonian.noise_field)
    field = np.asarray(hamiltonian.field)
    n_samples = max(noise_field.shape[0], field.shape[0] if field.ndim == 2 else 1)
    total_field = np.broadcast_to(field + noise_field, (n_samples, size))

    quadratic = 0.5 * np.einsum("kp,pq,kq->k", spins, coupling, spins)
    chunk = max(1, _CHUNK_ELEMENTS // spins.shape[0])
    means, seconds, logs = [], [], []
    for start in range(0, n_samples, chunk):
        energies = quadratic[None, :] + total_field[start : start + chunk] @ spins.T
        shift = np.max(energies.real, axis=1, keepdims=True)
        weights = np.exp(energies - shift)
        partition = weights.sum(axis=1)
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(partition)) and np.all(partition != 0)):
            raise NonFiniteEnergy("Gibbs weights overflowed or cancelled to zero")
        probs = weights / partition[:, None]
        means.append(probs @ spins)
        seconds.append(np.einsum("nk,kp,kq->npq", probs, spins, spins))
        logs.append(shift[:, 0] + np.log(partition))
    return GibbsMoments(np.concatenate(means), np.concatenate(seconds), np.concatenate(logs))


# ----------------------------------------------------------------------
# Teacher and student hidden units
# ----------------------------------------------------------------------
def curie_weiss_distribution(beta_star: float, q_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spins τ* and their probabilities under exp(½ β*² τᵀ Q τ)."""

    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    spins = spin_configurations(q_matrix.shape[0])
    energies = 0.5 * beta_star**2 * np.einsum("kp,pq,kq->k", spins, q_matrix, spins)
    weights = np.exp(energies - energies.max())
    return spins, weights / weights.sum()


def curie_weiss_moments(beta_star: float, q_matrix: np.ndarray, p_star: Optional[int] = None) -> np.ndarray:
    """Teacher hidden-unit correlation R = ⟨τ* τ*ᵀ⟩."""

    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    if p_star is not None and q_matrix.shape != (p_star, p_star):
        raise DimensionMismatch(f"Q must be {p_star}×{p_star}, got {q_matrix.shape}")
    check_enumeration(q_matrix.shape[0], "teacher hidden units")
    spins, probs = curie_weiss_distribution(beta_star, q_matrix)
    correlation = np.einsum("k,kp,kq->pq", probs, spins, spins)
    correlation = 0.5 * (correlation + correlation.T)
    np.fill_diagonal(correlation, 1.0)
    return correlation


def lo_hamiltonian(
    state: OrderParameterState,
    h: Hyperparameters,
    tau_star: np.ndarray,
    noise: GaussianNoise,
) -> QuadraticHamiltonian:
    coupling = h.beta**2 * (state.s - state.q)
    field = h.beta_star * h.beta * (np.asarray(tau_star, dtype=np.float64) @ state.m)
    return QuadraticHamiltonian(coupling, field, h.beta * noise_fields(state.q, noise))


def hidden_moments_L_O(
    state: OrderParameterState,
    h: Hyperparameters,
    tau_star: np.ndarray,
    noise: GaussianNoise,
) -> tuple[np.ndarray, np.ndarray]:
    """⟨τ⟩ and ⟨ττᵀ⟩ per noise sample, complex."""

    check_enumeration(state.p, "student hidden units")
    moments = gibbs_average(lo_hamiltonian(state, h, tau_star, noise))
    return moments.mean, moments.second


def hidden_moments_M(s: np.ndarray, beta: float) -> np.ndarray:
    """⟨ττᵀ⟩ under exp(½ β² τᵀ s τ)."""

    s = np.asarray(s, dtype=np.float64)
    check_enumeration(s.shape[0], "student hidden units")
    moments = gibbs_average(QuadraticHamiltonian(beta**2 * s, np.zeros(s.shape[0]), np.zeros((1, s.shape[0]))))
    second = moments.second[0].real
    return 0.5 * (second + second.T)


def log_partition_M(s: np.ndarray, beta: float) -> float:
    s = np.asarray(s, dtype=np.float64)
    moments = gibbs_average(QuadraticHamiltonian(beta**2 * s, np.zeros(s.shape[0]), np.zeros((1, s.shape[0]))))
    return float(moments.log_partition[0].real)


# ----------------------------------------------------------------------
# Student patterns
# ----------------------------------------------------------------------
def lc_hamiltonian(conj: Conjugates, xi_star: np.ndarray, noise: GaussianNoise) -> QuadraticHamiltonian:
    s_hat = np.array(conj.s_hat, dtype=np.float64)
    np.fill_diagonal(s_hat, 0.0)
    coupling = s_hat - conj.q_hat
    field = np.asarray(xi_star, dtype=np.float64) @ conj.m_hat
    return QuadraticHamiltonian(coupling, field, noise_fields(conj.q_hat, noise))


def pattern_moments_binary(
    conj: Conjugates, xi_star: np.ndarray, noise: GaussianNoise
) -> tuple[np.ndarray, np.ndarray]:
    """⟨ξ⟩ and ⟨ξξᵀ⟩ for binary student patterns, complex.

    ``xi_star`` is one teacher column (P*,) or one column per sample (n, P*).
    """

    check_enumeration(conj.q_hat.shape[0], "student patterns")
    moments = gibbs_average(lc_hamiltonian(conj, xi_star, noise))
    return moments.mean, moments.second


def precision_matrix(conj: Conjugates) -> np.ndarray:
    s_hat = np.array(conj.s_hat, dtype=np.float64)
    np.fill_diagonal(s_hat, 0.0)
    precision = np.eye(s_hat.shape[0]) + conj.q_hat - s_hat
    condition = np.linalg.cond(precision)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularPrecision(f"I + q_hat - s_hat has condition number {condition:.3e}")
    return precision


def pattern_moments_gaussian(
    conj: Conjugates, xi_star: np.ndarray, noise: GaussianNoise
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean per sample (complex) and the shared covariance [I + q̂ − ŝ]⁻¹."""

    covariance = np.linalg.inv(precision_matrix(conj))
    covariance = 0.5 * (covariance + covariance.T)
    drive = np.asarray(xi_star, dtype=np.float64) @ conj.m_hat + noise_fields(conj.q_hat, noise)
    return drive @ covariance, covariance


def gaussian_log_partition(conj: Conjugates, xi_star: np.ndarray, noise: GaussianNoise) -> np.ndarray:
    """log E_ξ exp L^C for ξ ~ Normal(0, I): ½ bᵀΛ⁻¹b − ½ log det Λ."""

    precision = precision_matrix(conj)
    sign, logdet = np.linalg.slogdet(precision)
    if sign <= 0:
        raise SingularPrecision("I + q_hat - s_hat is not positive definite")
    drive = np.asarray(xi_star, dtype=np.float64) @ conj.m_hat + noise_fields(conj.q_hat, noise)
    solved = np.linalg.solve(precision, np.atleast_2d(drive).T).T
    return 0.5 * np.sum(drive * solved, axis=1) - 0.5 * logdet


def averaged_gaussian_pattern_equations(
    conj: Conjugates, q_matrix: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(m, q, s) for Gaussian student patterns with the z-average done exactly."""

    covariance = np.linalg.inv(precision_matrix(conj))
    covariance = 0.5 * (covariance + covariance.T)
    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    m = q_matrix @ conj.m_hat @ covariance
    signal = covariance @ conj.m_hat.T @ q_matrix @ conj.m_hat @ covariance
    q = signal + covariance @ conj.q_hat @ covariance
    q = 0.5 * (q + q.T)
    s = covariance + q
    return m, q, 0.5 * (s + s.T)
