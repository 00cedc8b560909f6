"""Damped fixed-point iteration of the replica-symmetric saddle-point equations."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

from app.services.model_core import (
    Hyperparameters,
    NonFiniteEnergy,
    NonFiniteUpdate,
    OrderParameterState,
    ParameterOutOfRange,
    SingularSampleCovariance,
    StudentPrior,
    TeacherPrior,
    clamp_psd,
    spin_configurations,
)
from app.services.pattern_sampling import gaussian_factor, sample_binary_arcsine
from app.services.spin_averages import (
    Conjugates,
    GaussianNoise,
    averaged_gaussian_pattern_equations,
    curie_weiss_distribution,
    hidden_moments_L_O,
    hidden_moments_M,
    pattern_moments_binary,
)
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)

_WHITENING_ATTEMPTS = 3
_ORTHANT_CACHE: Dict[Tuple[bytes, Tuple[int, ...], int], np.ndarray] = {}


@dataclass(frozen=True)
class SolverConfig:
    dt_conjugate: float = 1.0
    dt_order: float = 0.1
    n_gaussian_samples: int = 10_000
    tolerance: float = 1e-6
    max_iters: int = 10_000
    seed: int = 0
    average_window: int = 50
    plateau_tolerance: float = 5e-3
    orthant_samples: int = 1_000_000

    def __post_init__(self) -> None:
        for name in ("dt_conjugate", "dt_order"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ParameterOutOfRange(f"{name} must lie in (0, 1], got {value}")
        if self.n_gaussian_samples < 4 or self.n_gaussian_samples % 2:
            raise ParameterOutOfRange(
                f"n_gaussian_samples must be an even number >= 4, got {self.n_gaussian_samples}"
            )
        if self.max_iters < 1 or self.average_window < 1:
            raise ParameterOutOfRange("max_iters and average_window must be >= 1")


class StopReason(str, enum.Enum):
    TOLERANCE = "tolerance"
    PLATEAU = "plateau"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Outcome of :func:`solve`.

    ``converged`` holds only when the raw residual fell below the tolerance.
    A run that stopped because two consecutive window averages differ by
    less than the plateau tolerance (the Monte Carlo noise floor) is
    ``settled`` but not converged; ``plateau_drift`` keeps that distance.
    """

    state: OrderParameterState
    converged: bool
    iterations: int
    residual_trace: np.ndarray
    imaginary_leakage: float
    stop_reason: StopReason
    plateau_drift: float = float("nan")

    @property
    def settled(self) -> bool:
        return self.stop_reason is not StopReason.MAX_ITERS


# ----------------------------------------------------------------------
# Gaussian samples
# ----------------------------------------------------------------------
def whitened_gaussian_samples(n: int, p: int, rng: np.random.Generator) -> GaussianNoise:
    """n antithetic P×P standard-normal matrices with exactly zero mean and unit variance.

    The first half of the batch is drawn, the second half is its negation.
    The P² streams are then whitened jointly through a Cholesky factor of
    their sample covariance; when that covariance is rank deficient each
    stream is rescaled on its own.
    """

    if n < 4 or n % 2:
        raise ParameterOutOfRange(f"Sample count must be an even number >= 4, got {n}")
    streams = p * p
    for attempt in range(_WHITENING_ATTEMPTS):
        half = rng.standard_normal((n // 2, streams))
        raw = np.concatenate([half, -half])
        covariance = raw.T @ raw / n
        try:
            if np.linalg.matrix_rank(covariance) < streams:
                raise np.linalg.LinAlgError("rank-deficient sample covariance")
            factor = np.linalg.cholesky(covariance)
            whitened = np.linalg.solve(factor, raw.T).T
        except np.linalg.LinAlgError:
            scale = np.sqrt(np.diag(covariance))
            if np.any(scale == 0.0):
                LOGGER.warning("Degenerate noise stream on attempt %d; resampling", attempt + 1)
                continue
            whitened = raw / scale
        return GaussianNoise(whitened.reshape(n, p, p))
    raise SingularSampleCovariance(f"Could not whiten {n} samples of {streams} streams")


# ----------------------------------------------------------------------
# Initial conditions
# ----------------------------------------------------------------------
class InitKind(str, enum.Enum):
    PARAMAGNETIC = "paramagnetic"
    NEAR_DIAGONAL = "near_diagonal"
    OFF_DIAGONAL = "off_diagonal"
    RANDOM = "random"


@dataclass(frozen=True)
class InitialCondition:
    kind: InitKind = InitKind.PARAMAGNETIC
    m0: float = 0.5
    eps: float = 0.01
    pair: Tuple[int, int] = (0, 1)
    scale: float = 0.1
    seed: int = 0

    @classmethod
    def paramagnetic(cls) -> "InitialCondition":
        return cls(kind=InitKind.PARAMAGNETIC)

    @classmethod
    def near_diagonal(cls, m0: float = 0.5, eps: float = 0.01) -> "InitialCondition":
        if not eps < m0:
            raise ParameterOutOfRange(f"near-diagonal start needs eps < m0, got eps={eps}, m0={m0}")
        return cls(kind=InitKind.NEAR_DIAGONAL, m0=m0, eps=eps)

    @classmethod
    def off_diagonal(cls, m0: float = 0.5, eps: float = 0.01, pair: Tuple[int, int] = (0, 1)) -> "InitialCondition":
        return cls(kind=InitKind.OFF_DIAGONAL, m0=m0, eps=eps, pair=tuple(pair))

    @classmethod
    def partial_psb(cls, p_star: int, p: int, m0: float = 0.5, eps: float = 0.01) -> "InitialCondition":
        """Two students share teacher 0: the first extra student when P > P*."""

        pair = (0, p_star) if p > p_star else (0, 1)
        return cls.off_diagonal(m0, eps, pair)

    @classmethod
    def random(cls, scale: float = 0.1, seed: int = 0) -> "InitialCondition":
        return cls(kind=InitKind.RANDOM, scale=scale, seed=seed)

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "InitialCondition":
        return cls(
            kind=InitKind(payload.get("kind", InitKind.PARAMAGNETIC.value)),
            m0=float(payload.get("m0", 0.5)),
            eps=float(payload.get("eps", 0.01)),
            pair=tuple(payload.get("pair", (0, 1))),  # type: ignore[arg-type]
            scale=float(payload.get("scale", 0.1)),
            seed=int(payload.get("seed", 0)),
        )


def initial_state(
    init: InitialCondition,
    p_star: int,
    p: int,
    prior: StudentPrior = StudentPrior.BINARY_UNIFORM,
) -> OrderParameterState:
    if init.kind is InitKind.PARAMAGNETIC:
        return OrderParameterState.zeros(p_star, p)
    if init.kind is InitKind.RANDOM:
        rng = np.random.default_rng(init.seed)
        overlap = init.scale * rng.uniform(-1.0, 1.0, size=(p_star, p))
    else:
        overlap = np.full((p_star, p), init.eps)
        paired = min(p_star, p)
        overlap[np.arange(paired), np.arange(paired)] = init.m0
        if init.kind is InitKind.OFF_DIAGONAL:
            row, col = init.pair
            if not (0 <= row < p_star and 0 <= col < p):
                raise ParameterOutOfRange(f"pair {init.pair} lies outside a {p_star}×{p} magnetization")
            overlap[row, col] = init.m0
    spin_glass = overlap.T @ overlap
    if prior is StudentPrior.BINARY_UNIFORM:
        spin_glass = np.clip(spin_glass, -1.0, 1.0)
    zeros = OrderParameterState.zeros(p_star, p)
    return zeros.evolve(m=overlap, q=spin_glass)


# ----------------------------------------------------------------------
# Teacher-side averages
# ----------------------------------------------------------------------
def orthant_weights(q_matrix: np.ndarray, n_samples: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """Probability of each ±1 teacher column (rows of ``spin_configurations``) under the arcsine law.

    Diagonal Q gives the exact uniform law. Otherwise the orthant masses are
    estimated by sampling, made exactly sign-symmetric, and cached per Q.
    """

    q_matrix = np.asarray(q_matrix, dtype=np.float64)
    size = q_matrix.shape[0]
    if np.allclose(q_matrix, np.diag(np.diag(q_matrix))):
        return np.full(2**size, 2.0**-size)
    key = (q_matrix.tobytes(), q_matrix.shape, n_samples)
    cached = _ORTHANT_CACHE.get(key)
    if cached is not None:
        return cached
    LOGGER.info("Estimating %d orthant weights from %d samples", 2**size, n_samples)
    patterns = sample_binary_arcsine(q_matrix, n_samples, np.random.default_rng(seed)).values
    bits = ((patterns + 1.0) / 2.0).astype(np.int64)
    codes = (bits * (1 << np.arange(size - 1, -1, -1))[:, None]).sum(axis=0)
    counts = np.bincount(codes, minlength=2**size).astype(np.float64)
    weights = counts / counts.sum()
    weights = 0.5 * (weights + weights[::-1])
    weights.setflags(write=False)
    _ORTHANT_CACHE[key] = weights
    return weights


@dataclass(frozen=True, eq=False)
class SaddleContext:
    """Everything about the teacher that the iteration needs, computed once."""

    q_matrix: np.ndarray
    hidden_spins: np.ndarray
    hidden_probs: np.ndarray
    pattern_spins: Optional[np.ndarray] = None
    pattern_probs: Optional[np.ndarray] = None
    pattern_factor: Optional[np.ndarray] = None
    extras: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, h: Hyperparameters, q_matrix: np.ndarray, orthant_samples: int = 1_000_000) -> "SaddleContext":
        q_matrix = clamp_psd(q_matrix, "Q")
        spins, probs = curie_weiss_distribution(h.beta_star, q_matrix)
        if h.student_prior is StudentPrior.STANDARD_GAUSSIAN:
            return cls(q_matrix=q_matrix, hidden_spins=spins, hidden_probs=probs)
        if h.teacher_prior is TeacherPrior.BINARY_ARCSINE:
            return cls(
                q_matrix=q_matrix,
                hidden_spins=spins,
                hidden_probs=probs,
                pattern_spins=spin_configurations(q_matrix.shape[0]),
                pattern_probs=orthant_weights(q_matrix, orthant_samples),
            )
        return cls(
            q_matrix=q_matrix,
            hidden_spins=spins,
            hidden_probs=probs,
            pattern_factor=gaussian_factor(q_matrix),
        )


def _real_mean(values: np.ndarray) -> Tuple[np.ndarray, float]:
    averaged = values.mean(axis=0)
    return averaged.real, float(np.max(np.abs(averaged.imag))) if averaged.size else 0.0


def conjugate_targets(
    state: OrderParameterState,
    h: Hyperparameters,
    context: SaddleContext,
    noise: GaussianNoise,
) -> Tuple[Conjugates, float]:
    """Right-hand sides for m̂, ŝ, q̂ and the largest E_z imaginary part seen."""

    n = noise.count
    m_acc = np.zeros((state.p_star, state.p))
    second_acc = np.zeros((state.p, state.p))
    outer_acc = np.zeros((state.p, state.p))
    leakage = 0.0
    for tau_star, weight in zip(context.hidden_spins, context.hidden_probs):
        mean, second = hidden_moments_L_O(state, h, tau_star, noise)
        mean_avg, leak_mean = _real_mean(mean)
        second_avg, leak_second = _real_mean(second)
        outer = np.einsum("np,nq->pq", mean, mean) / n
        m_acc += weight * np.outer(tau_star, mean_avg)
        second_acc += weight * second_avg
        outer_acc += weight * outer.real
        leakage = max(leakage, leak_mean, leak_second, float(np.max(np.abs(outer.imag))))
    m_hat = h.beta_star * h.beta * h.alpha * m_acc
    s_hat = h.beta**2 * h.alpha * (second_acc - hidden_moments_M(state.s, h.beta))
    np.fill_diagonal(s_hat, 0.0)
    q_hat = h.beta**2 * h.alpha * outer_acc
    return Conjugates(m_hat, s_hat, 0.5 * (q_hat + q_hat.T)), leakage


def order_targets(
    conj: Conjugates,
    h: Hyperparameters,
    context: SaddleContext,
    noise: GaussianNoise,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Right-hand sides for m, s, q given conjugates."""

    if h.student_prior is StudentPrior.STANDARD_GAUSSIAN:
        m, q, s = averaged_gaussian_pattern_equations(conj, context.q_matrix)
        return m, s, q, 0.0

    p_star, p = conj.m_hat.shape
    n = noise.count
    leakage = 0.0
    if context.pattern_spins is not None:
        assert context.pattern_probs is not None
        m = np.zeros((p_star, p))
        s = np.zeros((p, p))
        q = np.zeros((p, p))
        for xi_star, weight in zip(context.pattern_spins, context.pattern_probs):
            if weight == 0.0:
                continue
            mean, second = pattern_moments_binary(conj, xi_star, noise)
            mean_avg, leak_mean = _real_mean(mean)
            outer = np.einsum("np,nq->pq", mean, mean) / n
            m += weight * np.outer(xi_star, mean_avg)
            s += weight * second.mean(axis=0).real
            q += weight * outer.real
            leakage = max(leakage, leak_mean, float(np.max(np.abs(outer.imag))))
    else:
        assert context.pattern_factor is not None
        generator = rng if rng is not None else np.random.default_rng(0)
        xi_batch = (context.pattern_factor @ generator.standard_normal((p_star, n))).T
        mean, second = pattern_moments_binary(conj, xi_batch, noise)
        m_complex = np.einsum("na,np->ap", xi_batch, mean) / n
        outer = np.einsum("np,nq->pq", mean, mean) / n
        m = m_complex.real
        s = second.mean(axis=0).real
        q = outer.real
        leakage = max(float(np.max(np.abs(m_complex.imag))), float(np.max(np.abs(outer.imag))))
    np.fill_diagonal(s, 1.0)
    return m, 0.5 * (s + s.T), q, leakage


def _advance(
    state: OrderParameterState,
    h: Hyperparameters,
    context: SaddleContext,
    cfg: SolverConfig,
    noise: GaussianNoise,
    rng: Optional[np.random.Generator],
    iteration: int,
) -> Tuple[OrderParameterState, float]:
    try:
        targets, leak_conj = conjugate_targets(state, h, context, noise)
        dt = cfg.dt_conjugate
        conj = Conjugates(
            state.m_hat + dt * (targets.m_hat - state.m_hat),
            state.s_hat + dt * (targets.s_hat - state.s_hat),
            state.q_hat + dt * (targets.q_hat - state.q_hat),
        )
        m, s, q, leak_order = order_targets(conj, h, context, noise, rng)
    except NonFiniteEnergy as exc:
        raise NonFiniteUpdate(str(exc), iteration) from exc
    dt = cfg.dt_order
    candidate = OrderParameterState(
        m=state.m + dt * (m - state.m),
        s=state.s + dt * (s - state.s),
        q=state.q + dt * (q - state.q),
        m_hat=conj.m_hat,
        s_hat=conj.s_hat,
        q_hat=conj.q_hat,
    )
    if not candidate.is_finite():
        raise NonFiniteUpdate("Saddle-point update produced NaN or Inf", iteration)
    return candidate, max(leak_conj, leak_order)


def iterate_step(
    state: OrderParameterState,
    h: Hyperparameters,
    context: SaddleContext,
    cfg: SolverConfig,
    noise: GaussianNoise,
    rng: Optional[np.random.Generator] = None,
    iteration: int = 0,
) -> OrderParameterState:
    """One damped update: conjugates first, then m, s, q from the new conjugates."""

    return _advance(state, h, context, cfg, noise, rng, iteration)[0]


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration])


def solve(
    h: Hyperparameters,
    q_matrix: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
    init: Optional[OrderParameterState] = None,
    context: Optional[SaddleContext] = None,
) -> SolveResult:
    """Iterate to a (stochastic) fixed point and report the window-averaged state."""

    context = context or SaddleContext.build(h, q_matrix, cfg.orthant_samples)
    state = init if init is not None else initial_state(InitialCondition.paramagnetic(), h.p_star, h.p, h.student_prior)
    window: Deque[OrderParameterState] = deque(maxlen=2 * cfg.average_window)
    residuals: List[float] = []
    leakage = 0.0
    stop = StopReason.MAX_ITERS
    drift = float("nan")
    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        rng = iteration_rng(cfg.seed, iteration)
        noise = whitened_gaussian_samples(cfg.n_gaussian_samples, h.p, rng)
        new_state, leakage = _advance(state, h, context, cfg, noise, rng, iteration)
        residuals.append(state.max_abs_change(new_state))
        state = new_state
        window.append(state)
        if residuals[-1] <= cfg.tolerance:
            stop = StopReason.TOLERANCE
            break
        if len(window) == window.maxlen:
            recent = list(window)
            older = OrderParameterState.average(recent[: cfg.average_window])
            newer = OrderParameterState.average(recent[cfg.average_window :])
            drift = newer.max_abs_change(older)
            if drift <= cfg.plateau_tolerance:
                stop = StopReason.PLATEAU
                break
    tail = list(window)[-cfg.average_window :]
    reported = OrderParameterState.average(tail) if tail else state
    result = SolveResult(
        state=reported,
        converged=stop is StopReason.TOLERANCE,
        iterations=iteration,
        residual_trace=np.asarray(residuals),
        imaginary_leakage=leakage,
        stop_reason=stop,
        plateau_drift=drift,
    )
    telemetry = {
        "iterations": iteration,
        "converged": result.converged,
        "stop_reason": stop.value,
        "residual": residuals[-1] if residuals else float("nan"),
        "imaginary_leakage": leakage,
        "alpha": h.alpha,
    }
    LOGGER.info("solve_finished", extra={"telemetry": telemetry})
    if stop is StopReason.MAX_ITERS:
        LOGGER.warning("Saddle-point iteration hit max_iters=%d at alpha=%s", cfg.max_iters, h.alpha)
    return result
