"""Finite-N Monte Carlo: teacher data, posterior sampling of student patterns, overlaps."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, logsumexp

from app.services.model_core import (
    Dataset,
    DimensionMismatch,
    DivergedTrajectory,
    Hyperparameters,
    ParameterOutOfRange,
    PatternMatrix,
    PatternPrior,
    StudentPrior,
    TeacherPrior,
    check_enumeration,
    spin_configurations,
)
from app.services.pattern_sampling import sample_binary_arcsine, sample_gaussian_patterns
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)

LOG_TWO = float(np.log(2.0))


@dataclass(frozen=True)
class LangevinConfig:
    """Underdamped Langevin with momentum decay friction·√step and a geometric step schedule."""

    step_size: float = 1e-3
    decay: float = 1.0
    friction: float = 1.0
    cd_steps: int = 1
    guard: float = 1e3

    def __post_init__(self) -> None:
        if self.cd_steps < 1:
            raise ParameterOutOfRange(f"cd_steps must be >= 1, got {self.cd_steps}")
        if self.step_size <= 0 or not 0 < self.decay <= 1.0:
            raise ParameterOutOfRange("step_size must be > 0 and decay must lie in (0, 1]")

    def step_at(self, epoch: int) -> float:
        return self.step_size * self.decay**epoch


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 512
    m: Optional[int] = None
    gibbs_sweeps: int = 200
    mc_sweeps: int = 200
    external_field: float = 0.0
    assignment: Optional[Tuple[int, ...]] = None
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    measure_window: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ParameterOutOfRange(f"N must be >= 1, got {self.n}")
        if self.m is not None and self.m < 0:
            raise ParameterOutOfRange(f"M must be >= 0, got {self.m}")
        if self.gibbs_sweeps < 0 or self.mc_sweeps < 0 or self.measure_window < 1:
            raise ParameterOutOfRange("sweep counts must be >= 0 and measure_window >= 1")

    def sample_count(self, alpha: float) -> int:
        """M from the config when given, otherwise round(α N)."""

        return self.m if self.m is not None else int(round(alpha * self.n))

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SimulationConfig":
        langevin = LangevinConfig(**payload.get("langevin", {}))
        assignment = payload.get("assignment")
        return cls(
            n=int(payload.get("n", 512)),
            m=None if payload.get("m") is None else int(payload["m"]),
            gibbs_sweeps=int(payload.get("gibbs_sweeps", 200)),
            mc_sweeps=int(payload.get("mc_sweeps", 200)),
            external_field=float(payload.get("external_field", 0.0)),
            assignment=None if assignment is None else tuple(int(v) for v in assignment),
            langevin=langevin,
            measure_window=int(payload.get("measure_window", 50)),
            seed=int(payload.get("seed", 0)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "m": self.m,
            "gibbs_sweeps": self.gibbs_sweeps,
            "mc_sweeps": self.mc_sweeps,
            "external_field": self.external_field,
            "assignment": None if self.assignment is None else list(self.assignment),
            "langevin": self.langevin.__dict__.copy(),
            "measure_window": self.measure_window,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class OverlapTrace:
    overlaps: np.ndarray
    rates: np.ndarray
    seed: int = 0

    @property
    def epochs(self) -> int:
        return int(self.overlaps.shape[0])

    def best_match(self) -> np.ndarray:
        """Per epoch: mean over teacher patterns of the largest |m| across students."""

        if self.epochs == 0:
            return np.empty(0)
        return np.abs(self.overlaps).max(axis=2).mean(axis=1)

    def summary(self, window: int) -> Tuple[np.ndarray, np.ndarray]:
        tail = self.overlaps[-window:]
        return tail.mean(axis=0), tail.std(axis=0)

    def to_frame(self) -> pd.DataFrame:
        epochs, p_star, p = self.overlaps.shape if self.overlaps.ndim == 3 else (0, 0, 0)
        frame = pd.DataFrame({"epoch": np.arange(epochs)})
        for mu in range(p_star):
            for nu in range(p):
                frame[f"m_{mu}_{nu}"] = self.overlaps[:, mu, nu]
        frame["rate"] = self.rates
        frame["seed"] = self.seed
        return frame


@dataclass(frozen=True, eq=False)
class TrainingResult:
    trace: OverlapTrace
    patterns: PatternMatrix


# ----------------------------------------------------------------------
# Teacher data
# ----------------------------------------------------------------------
def _ising_draw(field_values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent ±1 spins with P(+1) = sigmoid(2 h)."""

    return np.where(rng.random(field_values.shape) < expit(2.0 * field_values), 1.0, -1.0)


def generate_teacher_data(
    xi_star: PatternMatrix,
    beta_star: float,
    m: int,
    n: Optional[int],
    cfg: SimulationConfig,
    rng: np.random.Generator,
) -> Dataset:
    """M independent block-Gibbs chains of the teacher RBM, burn-in discarded."""

    patterns = xi_star.values
    if n is not None and n != patterns.shape[1]:
        raise DimensionMismatch(f"Teacher patterns have N={patterns.shape[1]}, expected {n}")
    n = patterns.shape[1]
    scale = beta_star / np.sqrt(n)
    visible = rng.choice([-1.0, 1.0], size=(m, n))
    for _ in range(cfg.gibbs_sweeps):
        hidden = _ising_draw(scale * visible @ patterns.T, rng)
        visible = _ising_draw(scale * hidden @ patterns, rng)
    return Dataset(visible, provenance={"beta_star": beta_star, "sweeps": cfg.gibbs_sweeps})


# ----------------------------------------------------------------------
# Posterior
# ----------------------------------------------------------------------
def log_cosh(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(x, -x) - LOG_TWO


def quadratic_log_normalizer(gram: np.ndarray, beta: float, spins: Optional[np.ndarray] = None) -> float:
    """log Z̃ = log 2^{-P} Σ_τ exp(β²/2 τᵀ G τ)."""

    size = gram.shape[0]
    spins = spin_configurations(size) if spins is None else spins
    energies = 0.5 * beta**2 * np.einsum("kp,pq,kq->k", spins, gram, spins)
    return float(logsumexp(energies) - size * LOG_TWO)


def log_prior(xi: PatternMatrix) -> float:
    values = xi.values
    if xi.prior is PatternPrior.BINARY:
        return -values.size * LOG_TWO
    return float(-0.5 * np.sum(values**2) - 0.5 * values.size * np.log(2.0 * np.pi))


def posterior_log_weight(xi: PatternMatrix, dataset: Dataset, beta: float) -> float:
    """Σ_a Σ_μ log cosh((β/√N) ξ^μ·σ^a) − M log Z̃(ξ) + log P(ξ)."""

    values = xi.values
    if values.shape[1] != dataset.n:
        raise DimensionMismatch(f"Patterns have N={values.shape[1]}, data has N={dataset.n}")
    check_enumeration(values.shape[0], "student hidden units")
    n = values.shape[1]
    data_term = float(np.sum(log_cosh(beta / np.sqrt(n) * dataset.samples @ values.T)))
    normalizer = quadratic_log_normalizer(values @ values.T / n, beta)
    return data_term - dataset.m * normalizer + log_prior(xi)


class BinaryPosteriorChain:
    """Single-site Metropolis on binary student patterns with cached fields.

    ``fields[a, μ]`` holds ξ^μ·σ^a/√N and ``gram`` holds ξξᵀ/N; a flip of
    ξ^μ_i touches column μ of the fields and row/column μ of the Gram matrix.
    """

    def __init__(
        self,
        xi: np.ndarray,
        data: np.ndarray,
        beta: float,
        external_field: float = 0.0,
        target: Optional[np.ndarray] = None,
    ) -> None:
        self.xi = np.array(xi, dtype=np.float64)
        self.data = np.asarray(data, dtype=np.float64)
        self.beta = float(beta)
        self.p, self.n = self.xi.shape
        check_enumeration(self.p, "student hidden units")
        self.scale = 1.0 / np.sqrt(self.n)
        self.external_field = float(external_field)
        self.target = None if target is None else np.asarray(target, dtype=np.float64)
        self.spins = spin_configurations(self.p)
        self.fields = self.scale * self.data @ self.xi.T
        self.gram = self.xi @ self.xi.T / self.n
        self.log_normalizer = quadratic_log_normalizer(self.gram, self.beta, self.spins)
        self.accepted = 0

    def log_weight(self) -> float:
        value = float(np.sum(log_cosh(self.beta * self.fields))) - self.data.shape[0] * self.log_normalizer
        if self.target is not None:
            value += self.external_field * float(np.sum(self.xi * self.target))
        return value

    def _proposal(self, mu: int, i: int) -> Tuple[float, np.ndarray, np.ndarray, float]:
        spin = self.xi[mu, i]
        column = self.fields[:, mu] - 2.0 * spin * self.scale * self.data[:, i]
        delta = float(np.sum(log_cosh(self.beta * column) - log_cosh(self.beta * self.fields[:, mu])))

        row_change = -2.0 * spin * self.xi[:, i] / self.n
        row_change[mu] = 0.0
        gram = self.gram.copy()
        gram[mu, :] += row_change
        gram[:, mu] += row_change
        log_normalizer = quadratic_log_normalizer(gram, self.beta, self.spins)
        delta -= self.data.shape[0] * (log_normalizer - self.log_normalizer)
        if self.target is not None:
            delta -= 2.0 * self.external_field * spin * self.target[mu, i]
        return delta, column, gram, log_normalizer

    def log_acceptance(self, mu: int, i: int) -> float:
        """Log weight ratio of flipping ξ^μ_i; the chain is left untouched."""

        return self._proposal(mu, i)[0]

    def attempt(self, mu: int, i: int, log_u: float) -> bool:
        delta, column, gram, log_normalizer = self._proposal(mu, i)
        if log_u >= delta:
            return False
        self.xi[mu, i] = -self.xi[mu, i]
        self.fields[:, mu] = column
        self.gram = gram
        self.log_normalizer = log_normalizer
        self.accepted += 1
        return True

    def sweep(self, rng: np.random.Generator) -> float:
        """N·P proposals at uniformly drawn sites; returns the acceptance rate."""

        proposals = self.n * self.p
        rows = rng.integers(0, self.p, size=proposals)
        cols = rng.integers(0, self.n, size=proposals)
        log_u = np.log(rng.random(proposals))
        accepted = 0
        for mu, i, u in zip(rows, cols, log_u):
            accepted += self.attempt(int(mu), int(i), float(u))
        return accepted / proposals

    def recomputed(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.scale * self.data @ self.xi.T, self.xi @ self.xi.T / self.n


def field_cache_drift(chain: BinaryPosteriorChain) -> float:
    """Largest absolute difference between cached and recomputed fields and Gram matrix."""

    fields, gram = chain.recomputed()
    drift = float(np.max(np.abs(gram - chain.gram)))
    if fields.size:
        drift = max(drift, float(np.max(np.abs(fields - chain.fields))))
    return drift


def exact_posterior(dataset: Dataset, beta: float, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """All binary student pattern sets (K, P, N) and their posterior probabilities."""

    n = dataset.n
    check_enumeration(p * n, "student pattern entries")
    configurations = spin_configurations(p * n).reshape(-1, p, n)
    log_weights = np.array(
        [posterior_log_weight(PatternMatrix(config, PatternPrior.BINARY), dataset, beta) for config in configurations]
    )
    return configurations, np.exp(log_weights - logsumexp(log_weights))


def measure_overlaps(xi: PatternMatrix | np.ndarray, xi_star: PatternMatrix | np.ndarray) -> np.ndarray:
    """P*×P matrix of ξ*^μ·ξ^ν / N."""

    student = xi.values if isinstance(xi, PatternMatrix) else np.asarray(xi, dtype=np.float64)
    teacher = xi_star.values if isinstance(xi_star, PatternMatrix) else np.asarray(xi_star, dtype=np.float64)
    if student.shape[1] != teacher.shape[1]:
        raise DimensionMismatch(f"Student N={student.shape[1]} differs from teacher N={teacher.shape[1]}")
    return teacher @ student.T / teacher.shape[1]


def _target_patterns(xi_star: np.ndarray, p: int, assignment: Optional[Sequence[int]]) -> np.ndarray:
    order = list(assignment) if assignment is not None else [mu % xi_star.shape[0] for mu in range(p)]
    if len(order) != p:
        raise DimensionMismatch(f"assignment has {len(order)} entries for {p} students")
    return xi_star[np.asarray(order, dtype=int)]


def train_student_binary(
    dataset: Dataset,
    beta: float,
    p: int,
    init: Optional[PatternMatrix],
    cfg: SimulationConfig,
    rng: np.random.Generator,
    xi_star: PatternMatrix,
) -> TrainingResult:
    """Metropolis sampling of binary student patterns, overlaps recorded every sweep."""

    if init is None:
        start = rng.choice([-1.0, 1.0], size=(p, dataset.n))
    else:
        start = init.values
        if start.shape != (p, dataset.n):
            raise DimensionMismatch(f"init has shape {start.shape}, expected {(p, dataset.n)}")
    target = None
    if cfg.external_field:
        target = _target_patterns(xi_star.values, p, cfg.assignment)
        LOGGER.info("Metropolis external field lambda=%s toward %s", cfg.external_field, cfg.assignment)
    chain = BinaryPosteriorChain(start, dataset.samples, beta, cfg.external_field, target)

    overlaps: List[np.ndarray] = []
    rates: List[float] = []
    for _ in range(cfg.mc_sweeps):
        rates.append(chain.sweep(rng))
        overlaps.append(measure_overlaps(chain.xi, xi_star))
    trace = OverlapTrace(_stack(overlaps, xi_star.count, p), np.asarray(rates), cfg.seed)
    _log_finished("metropolis", trace)
    return TrainingResult(trace, PatternMatrix(np.where(chain.xi >= 0, 1.0, -1.0), PatternPrior.BINARY))


def _stack(overlaps: List[np.ndarray], p_star: int, p: int) -> np.ndarray:
    return np.stack(overlaps) if overlaps else np.empty((0, p_star, p))


def _log_finished(method: str, trace: OverlapTrace) -> None:
    telemetry: Dict[str, Any] = {"method": method, "epochs": trace.epochs, "seed": trace.seed}
    if trace.epochs:
        telemetry["mean_rate"] = float(trace.rates.mean())
        telemetry["final_overlaps"] = trace.overlaps[-1].tolist()
    LOGGER.info("simulation_finished", extra={"telemetry": telemetry})


def contrastive_samples(
    xi: np.ndarray, data: np.ndarray, beta: float, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """k alternating Gibbs steps of the student RBM started at the data."""

    scale = beta / np.sqrt(xi.shape[1])
    visible = np.array(data, dtype=np.float64)
    for _ in range(steps):
        hidden = _ising_draw(scale * visible @ xi.T, rng)
        visible = _ising_draw(scale * hidden @ xi, rng)
    return visible


def log_posterior_gradient(
    xi: np.ndarray, data: np.ndarray, beta: float, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Data term minus the CD-k estimate of M ∇log Z, minus ξ from the Gaussian prior."""

    scale = beta / np.sqrt(xi.shape[1])
    gradient = -xi.copy()
    if data.shape[0] == 0 or beta == 0.0:
        return gradient
    negative = contrastive_samples(xi, data, beta, steps, rng)
    positive_phase = np.tanh(scale * data @ xi.T).T @ data
    negative_phase = np.tanh(scale * negative @ xi.T).T @ negative
    return gradient + scale * (positive_phase - negative_phase)


def train_student_gaussian(
    dataset: Dataset,
    beta: float,
    p: int,
    init: Optional[PatternMatrix],
    cfg: SimulationConfig,
    rng: np.random.Generator,
    xi_star: PatternMatrix,
) -> TrainingResult:
    """Stochastic-gradient Hamiltonian Monte Carlo on real student patterns.

    v ← (1 − a) v + η ∇log P(ξ|σ) + Normal(0, 2aη), ξ ← ξ + v, with a = γ√η.
    """

    langevin = cfg.langevin
    xi = rng.standard_normal((p, dataset.n)) if init is None else np.array(init.values, dtype=np.float64)
    if xi.shape != (p, dataset.n):
        raise DimensionMismatch(f"init has shape {xi.shape}, expected {(p, dataset.n)}")
    velocity = rng.normal(0.0, np.sqrt(langevin.step_at(0)), size=xi.shape)
    data = dataset.samples

    overlaps: List[np.ndarray] = []
    rates: List[float] = []
    for epoch in range(cfg.mc_sweeps):
        step = langevin.step_at(epoch)
        damping = min(langevin.friction * np.sqrt(step), 1.0)
        gradient = log_posterior_gradient(xi, data, beta, langevin.cd_steps, rng)
        velocity = (
            (1.0 - damping) * velocity
            + step * gradient
            + rng.normal(0.0, np.sqrt(2.0 * damping * step), size=xi.shape)
        )
        xi = xi + velocity
        if not np.all(np.isfinite(xi)) or np.max(np.abs(xi)) > langevin.guard:
            raise DivergedTrajectory(f"Langevin trajectory left the guard bound {langevin.guard} at epoch {epoch}")
        overlaps.append(measure_overlaps(xi, xi_star))
        rates.append(step)
    trace = OverlapTrace(_stack(overlaps, xi_star.count, p), np.asarray(rates), cfg.seed)
    _log_finished("langevin", trace)
    return TrainingResult(trace, PatternMatrix(xi, PatternPrior.REAL))


def magnitude_prune(xi_trained: PatternMatrix, xi_initial: PatternMatrix, keep: int) -> PatternMatrix:
    """Initial rows whose trained counterparts have the largest norms, norm-descending."""

    if xi_trained.values.shape != xi_initial.values.shape:
        raise DimensionMismatch("trained and initial patterns must have the same shape")
    if not 0 <= keep <= xi_trained.count:
        raise ParameterOutOfRange(f"keep must lie in [0, {xi_trained.count}], got {keep}")
    norms = np.linalg.norm(xi_trained.values, axis=1)
    order = np.lexsort((np.arange(norms.shape[0]), -norms))
    return xi_initial.rows(order[:keep])


# ----------------------------------------------------------------------
# End-to-end run
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SimulationOutcome:
    teacher: PatternMatrix
    dataset: Dataset
    result: TrainingResult

    def record(self, window: int) -> Dict[str, Any]:
        trace = self.result.trace
        row: Dict[str, Any] = {"epochs": trace.epochs, "samples": self.dataset.m}
        if trace.epochs:
            mean, std = trace.summary(window)
            row["best_match"] = float(trace.best_match()[-window:].mean())
            for mu in range(mean.shape[0]):
                for nu in range(mean.shape[1]):
                    row[f"m_{mu}_{nu}"] = float(mean[mu, nu])
                    row[f"m_{mu}_{nu}_std"] = float(std[mu, nu])
        return row


def sample_teacher(h: Hyperparameters, q_matrix: np.ndarray, n: int, rng: np.random.Generator) -> PatternMatrix:
    if h.teacher_prior is TeacherPrior.BINARY_ARCSINE:
        return sample_binary_arcsine(q_matrix, n, rng)
    return sample_gaussian_patterns(q_matrix, n, rng)


def simulate(
    h: Hyperparameters,
    q_matrix: np.ndarray,
    cfg: SimulationConfig,
    init: Optional[PatternMatrix] = None,
) -> SimulationOutcome:
    """Draw a teacher, generate round(αN) samples and train the student."""

    rng = np.random.default_rng(cfg.seed)
    teacher = sample_teacher(h, q_matrix, cfg.n, rng)
    dataset = generate_teacher_data(teacher, h.beta_star, cfg.sample_count(h.alpha), cfg.n, cfg, rng)
    train = train_student_binary if h.student_prior is StudentPrior.BINARY_UNIFORM else train_student_gaussian
    result = train(dataset, h.beta, h.p, init, cfg, rng, teacher)
    return SimulationOutcome(teacher=teacher, dataset=dataset, result=result)


def with_seed(cfg: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(cfg, seed=int(seed))
