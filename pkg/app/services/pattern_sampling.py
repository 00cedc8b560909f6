"""Teacher pattern generation with a prescribed covariance."""
from __future__ import annotations

import numpy as np

from app.services.model_core import (
    DegenerateSample,
    NonPSDCovariance,
    NonPSDTransformedCovariance,
    ParameterOutOfRange,
    PatternMatrix,
    PatternPrior,
    clamp_psd,
    uniform_covariance,
)
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)


def gaussian_factor(cov: np.ndarray, error: type = NonPSDCovariance) -> np.ndarray:
    """Return L with L @ L.T == cov.

    Cholesky is tried first; matrices on the PSD boundary (for example the
    all-ones matrix of perfectly correlated patterns) go through a clamped
    eigendecomposition instead.
    """

    checked = clamp_psd(cov, "covariance", error=error)
    try:
        return np.linalg.cholesky(checked)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(checked)
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def arcsine_covariance(q_matrix: np.ndarray) -> np.ndarray:
    """sin(πQ/2), the Gaussian covariance whose signs have covariance Q."""

    return np.sin(0.5 * np.pi * np.asarray(q_matrix, dtype=np.float64))


def sample_binary_arcsine(q_matrix: np.ndarray, n: int, rng: np.random.Generator) -> PatternMatrix:
    """±1 patterns (one row per pattern) whose columns have covariance Q."""

    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    if not np.allclose(np.diag(q_matrix), 1.0):
        raise ParameterOutOfRange("Binary patterns need a covariance with unit diagonal")
    clamp_psd(q_matrix, "Q")
    factor = gaussian_factor(arcsine_covariance(q_matrix), error=NonPSDTransformedCovariance)
    latent = factor @ rng.standard_normal((q_matrix.shape[0], n))
    # sign(0) has probability zero but would break the ±1 contract.
    values = np.where(latent >= 0.0, 1.0, -1.0)
    return PatternMatrix(values, PatternPrior.BINARY)


def sample_gaussian_patterns(q_matrix: np.ndarray, n: int, rng: np.random.Generator) -> PatternMatrix:
    """Real patterns whose columns are i.i.d. Normal(0, Q)."""

    factor = gaussian_factor(np.asarray(q_matrix, dtype=np.float64))
    values = factor @ rng.standard_normal((factor.shape[0], n))
    return PatternMatrix(values, PatternPrior.REAL)


def sample_projected_wishart(c: float, p: int, inner_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw Q ~ W(c, D): a Wishart matrix rescaled to unit diagonal.

    ``inner_dim == 0`` means D = P.
    """

    if not 0.0 <= c < 1.0:
        raise ParameterOutOfRange(f"Wishart correlation must lie in [0, 1), got {c}")
    if p < 1 or inner_dim < 0:
        raise ParameterOutOfRange(f"Wishart needs P >= 1 and D >= 1, got P={p}, D={inner_dim}")
    dim = inner_dim or p
    factor = np.linalg.cholesky(uniform_covariance(p, c))
    for attempt in range(2):
        columns = factor @ rng.standard_normal((p, dim))
        gram = columns @ columns.T
        diagonal = np.diag(gram)
        if np.all(diagonal > 0.0):
            scale = 1.0 / np.sqrt(diagonal)
            q_matrix = gram * np.outer(scale, scale)
            q_matrix = 0.5 * (q_matrix + q_matrix.T)
            np.fill_diagonal(q_matrix, 1.0)
            return q_matrix
        LOGGER.warning("Degenerate Wishart draw (attempt %d); resampling", attempt + 1)
    raise DegenerateSample(f"Wishart draw with P={p}, D={dim} has a zero diagonal entry")


def empirical_covariance(patterns: PatternMatrix) -> np.ndarray:
    """Column covariance (1/N) ξ ξᵀ of zero-mean patterns."""

    values = patterns.values
    return values @ values.T / values.shape[1]
