"""Critical data load from the linear stability of the paramagnetic solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import hmean

from app.services.model_core import (
    DimensionMismatch,
    ModelError,
    ParameterOutOfRange,
    clamp_psd,
    uniform_covariance,
)
from app.services.pattern_sampling import sample_projected_wishart
from app.services.spin_averages import curie_weiss_moments
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class StabilityReport:
    r_matrix: np.ndarray
    s_matrix: np.ndarray
    lambda_max: float
    alpha_crit: float

    def to_dict(self) -> dict:
        return {
            "lambda_max": self.lambda_max,
            "alpha_crit": self.alpha_crit,
            "R": self.r_matrix.tolist(),
            "S": self.s_matrix.tolist(),
        }


@dataclass(frozen=True)
class WishartStatistics:
    mean_alpha_crit: float
    harmonic_lambda_max: float
    alpha_crit_stderr: float
    draws: int


def _matrix_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(matrix)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def largest_eigenvalue_qr(q_matrix: np.ndarray, r_matrix: np.ndarray) -> float:
    """Largest eigenvalue of QR through the symmetric form Q^½ R Q^½."""

    root = _matrix_sqrt(q_matrix)
    similar = root @ r_matrix @ root
    return float(np.linalg.eigvalsh(0.5 * (similar + similar.T))[-1])


def power_iteration_lambda_max(
    matrix: np.ndarray, max_iter: int = 20_000, tol: float = 1e-13, seed: int = 0
) -> float:
    """Dominant eigenvalue of a (possibly nonsymmetric) matrix by power iteration."""

    matrix = np.asarray(matrix, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = np.abs(rng.normal(size=matrix.shape[0])) + 1.0
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = matrix @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        lam = float(x @ y)
        x_new = y / norm
        if np.linalg.norm(matrix @ x_new - lam * x_new) < tol:
            return float(x_new @ (matrix @ x_new))
        x = x_new
    return lam


def alpha_crit_from_lambda(lambda_max: float, beta_star: float, beta: float) -> float:
    return 1.0 / ((beta_star * beta) ** 2 * lambda_max)


def critical_load(q_matrix: np.ndarray, beta_star: float, beta: float) -> StabilityReport:
    """α_crit = 1 / ([β*β]² λ_max(QR)) with R the teacher hidden correlations.

    Only the teacher side enters: P and the student prior are not arguments.
    """

    if beta_star <= 0 or beta <= 0:
        raise ParameterOutOfRange(f"Inverse temperatures must be > 0, got {beta_star}, {beta}")
    q_matrix = clamp_psd(q_matrix, "Q")
    r_matrix = curie_weiss_moments(beta_star, q_matrix)
    lambda_max = largest_eigenvalue_qr(q_matrix, r_matrix)
    report = StabilityReport(
        r_matrix=r_matrix,
        s_matrix=q_matrix @ r_matrix,
        lambda_max=lambda_max,
        alpha_crit=alpha_crit_from_lambda(lambda_max, beta_star, beta),
    )
    LOGGER.debug("stability_report", extra={"telemetry": {"lambda_max": lambda_max, "alpha_crit": report.alpha_crit}})
    return report


def uniform_lambda_max(c: float, d: float, p_star: int) -> float:
    """Largest eigenvalue of QR when Q and R have constant off-diagonals c and d."""

    return (p_star - 1) ** 2 * c * d + (p_star - 1) * (c + d) + 1.0


def critical_load_uniform(c: float, beta_star: float, beta: float, p_star: int) -> StabilityReport:
    if not 0.0 <= c <= 1.0:
        raise ParameterOutOfRange(f"correlation c must lie in [0, 1], got {c}")
    if p_star < 1:
        raise DimensionMismatch(f"p_star must be >= 1, got {p_star}")
    q_matrix = uniform_covariance(p_star, c)
    r_matrix = curie_weiss_moments(beta_star, q_matrix, p_star)
    d = float(r_matrix[0, 1]) if p_star > 1 else 0.0
    if d < 0:
        raise ModelError(f"Curie–Weiss correlation d = {d} is negative for a ferromagnetic coupling")
    lambda_max = uniform_lambda_max(c, d, p_star)
    return StabilityReport(
        r_matrix=r_matrix,
        s_matrix=q_matrix @ r_matrix,
        lambda_max=lambda_max,
        alpha_crit=alpha_crit_from_lambda(lambda_max, beta_star, beta),
    )


def wishart_critical_statistics(
    c: float,
    p_star: int,
    beta_star: float,
    beta: float,
    n_draws: int,
    rng: np.random.Generator,
    inner_dim: int = 0,
) -> WishartStatistics:
    """Arithmetic mean of α_crit and harmonic mean of λ_max over Q ~ W(c, D)."""

    if n_draws < 1:
        raise ParameterOutOfRange(f"n_draws must be >= 1, got {n_draws}")
    alphas = np.empty(n_draws)
    lambdas = np.empty(n_draws)
    for draw in range(n_draws):
        q_matrix = sample_projected_wishart(c, p_star, inner_dim, rng)
        report = critical_load(q_matrix, beta_star, beta)
        alphas[draw] = report.alpha_crit
        lambdas[draw] = report.lambda_max
    stderr = float(alphas.std(ddof=1) / np.sqrt(n_draws)) if n_draws > 1 else 0.0
    return WishartStatistics(
        mean_alpha_crit=float(alphas.mean()),
        harmonic_lambda_max=float(hmean(lambdas)),
        alpha_crit_stderr=stderr,
        draws=n_draws,
    )


def strong_coupling_lambda_max(c: float, p_star: int) -> float:
    """Limit d → 1: every teacher hidden unit aligns."""

    return ((p_star - 1) * c + 1.0) * p_star


def weak_coupling_lambda_max(c: float, p_star: int) -> float:
    """Limit d → 0 (c ≪ T*²)."""

    return (p_star - 1) * c + 1.0
