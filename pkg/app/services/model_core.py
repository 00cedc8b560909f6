"""Shared domain types, validation and conventions for the teacher–student RBM."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import ConfigParseError
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)

ENUMERATION_CAP = 20
PSD_RELATIVE_TOLERANCE = 1e-10

__all__ = [
    "ConfigParseError",
    "CovarianceKind",
    "CovarianceSpec",
    "Dataset",
    "Hyperparameters",
    "OrderParameterState",
    "PatternMatrix",
    "StudentPrior",
    "TeacherPrior",
    "validate",
]


# ----------------------------------------------------------------------
# Errors
# ----------------------------------------------------------------------
class ModelError(ValueError):
    """Base class for every domain error raised by the toolkit."""

    def __init__(self, message: str, violations: Optional[List[Tuple[str, str]]] = None) -> None:
        super().__init__(message)
        self.violations: List[Tuple[str, str]] = list(violations or [])


class ParameterOutOfRange(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NonPSDCovariance(ModelError):
    pass


class NonPSDTransformedCovariance(ModelError):
    pass


class DegenerateSample(ModelError):
    pass


class EnumerationCapExceeded(ModelError):
    pass


class NonFiniteEnergy(ModelError):
    pass


class SingularPrecision(ModelError):
    pass


class SingularSampleCovariance(ModelError):
    pass


class DivergedTrajectory(ModelError):
    pass


class NonFiniteUpdate(ModelError):
    """NaN or Inf appeared in a saddle-point update."""

    def __init__(self, message: str, iteration: int) -> None:
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


# ----------------------------------------------------------------------
# Enumerations
# ----------------------------------------------------------------------
class StudentPrior(str, enum.Enum):
    BINARY_UNIFORM = "binary"
    STANDARD_GAUSSIAN = "gaussian"


class TeacherPrior(str, enum.Enum):
    BINARY_ARCSINE = "binary"
    GAUSSIAN = "gaussian"


class CovarianceKind(str, enum.Enum):
    IDENTITY = "identity"
    UNIFORM = "uniform"
    EXPLICIT = "explicit"
    WISHART = "wishart"


class PatternPrior(str, enum.Enum):
    BINARY = "binary"
    REAL = "real"


# ----------------------------------------------------------------------
# Spin enumeration
# ----------------------------------------------------------------------
def check_enumeration(size: int, what: str = "spins") -> None:
    if size > ENUMERATION_CAP:
        raise EnumerationCapExceeded(
            f"Enumerating {what} over 2^{size} states exceeds the cap of 2^{ENUMERATION_CAP}"
        )


@lru_cache(maxsize=32)
def _spin_table(size: int) -> np.ndarray:
    codes = np.arange(2**size)[:, None]
    bits = (codes >> np.arange(size - 1, -1, -1)) & 1
    table = (2 * bits - 1).astype(np.float64)
    table.setflags(write=False)
    return table


def spin_configurations(size: int) -> np.ndarray:
    """All vectors of {-1, +1}^size, one per row, in lexicographic order."""

    if size < 0:
        raise ParameterOutOfRange(f"Spin count must be non-negative, got {size}")
    check_enumeration(size)
    return _spin_table(size)


# ----------------------------------------------------------------------
# Hyperparameters and covariance
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Hyperparameters:
    beta_star: float
    beta: float
    alpha: float
    p_star: int
    p: int
    student_prior: StudentPrior = StudentPrior.BINARY_UNIFORM
    teacher_prior: TeacherPrior = TeacherPrior.BINARY_ARCSINE

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Hyperparameters":
        return cls(
            beta_star=float(payload["beta_star"]),
            beta=float(payload["beta"]),
            alpha=float(payload.get("alpha", 0.0)),
            p_star=int(payload["p_star"]),
            p=int(payload["p"]),
            student_prior=StudentPrior(payload.get("student_prior", StudentPrior.BINARY_UNIFORM.value)),
            teacher_prior=TeacherPrior(payload.get("teacher_prior", TeacherPrior.BINARY_ARCSINE.value)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta_star": self.beta_star,
            "beta": self.beta,
            "alpha": self.alpha,
            "p_star": self.p_star,
            "p": self.p,
            "student_prior": self.student_prior.value,
            "teacher_prior": self.teacher_prior.value,
        }

    def with_alpha(self, alpha: float) -> "Hyperparameters":
        return replace(self, alpha=float(alpha))


def uniform_covariance(size: int, c: float) -> np.ndarray:
    """Q with unit diagonal and every off-diagonal entry equal to c."""

    matrix = np.full((size, size), float(c))
    np.fill_diagonal(matrix, 1.0)
    return matrix


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """How the teacher-pattern covariance Q is produced."""

    kind: CovarianceKind
    size: int
    c: float = 0.0
    matrix: Optional[np.ndarray] = None
    inner_dim: int = 0
    seed: int = 0

    @classmethod
    def identity(cls, size: int) -> "CovarianceSpec":
        return cls(kind=CovarianceKind.IDENTITY, size=size)

    @classmethod
    def uniform(cls, size: int, c: float) -> "CovarianceSpec":
        return cls(kind=CovarianceKind.UNIFORM, size=size, c=float(c))

    @classmethod
    def explicit(cls, matrix: Sequence[Sequence[float]]) -> "CovarianceSpec":
        values = np.array(matrix, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionMismatch(f"Explicit covariance must be square, got shape {values.shape}")
        return cls(kind=CovarianceKind.EXPLICIT, size=values.shape[0], matrix=values)

    @classmethod
    def wishart(cls, size: int, c: float, inner_dim: int = 0, seed: int = 0) -> "CovarianceSpec":
        return cls(kind=CovarianceKind.WISHART, size=size, c=float(c), inner_dim=int(inner_dim), seed=int(seed))

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], size: int) -> "CovarianceSpec":
        kind = CovarianceKind(payload.get("kind", CovarianceKind.IDENTITY.value))
        if kind is CovarianceKind.IDENTITY:
            return cls.identity(size)
        if kind is CovarianceKind.UNIFORM:
            return cls.uniform(size, float(payload.get("c", 0.0)))
        if kind is CovarianceKind.EXPLICIT:
            return cls.explicit(payload["matrix"])
        return cls.wishart(size, float(payload.get("c", 0.0)), int(payload.get("inner_dim", 0)), int(payload.get("seed", 0)))

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind.value, "size": self.size}
        if self.kind in (CovarianceKind.UNIFORM, CovarianceKind.WISHART):
            payload["c"] = self.c
        if self.kind is CovarianceKind.WISHART:
            payload["inner_dim"] = self.inner_dim
            payload["seed"] = self.seed
        if self.kind is CovarianceKind.EXPLICIT and self.matrix is not None:
            payload["matrix"] = self.matrix.tolist()
        return payload

    def realize(self) -> np.ndarray:
        """The P*×P* matrix Q; deterministic for every kind (Wishart via its seed)."""

        if self.kind is CovarianceKind.IDENTITY:
            return np.eye(self.size)
        if self.kind is CovarianceKind.UNIFORM:
            return uniform_covariance(self.size, self.c)
        if self.kind is CovarianceKind.EXPLICIT:
            assert self.matrix is not None
            return np.array(self.matrix, dtype=np.float64)
        from app.services.pattern_sampling import sample_projected_wishart

        rng = np.random.default_rng(self.seed)
        return sample_projected_wishart(self.c, self.size, self.inner_dim, rng)


def clamp_psd(matrix: np.ndarray, name: str = "covariance", error: type = NonPSDCovariance) -> np.ndarray:
    """Return the symmetric PSD version of ``matrix`` or raise ``error``.

    Eigenvalues down to -1e-10 times the largest one are clamped to zero.
    """

    values = np.asarray(matrix, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {values.shape}")
    if not np.allclose(values, values.T, atol=1e-12):
        raise error(f"{name} is not symmetric")
    values = 0.5 * (values + values.T)
    eigvals, eigvecs = np.linalg.eigh(values)
    largest = max(float(eigvals[-1]), 0.0)
    floor = -PSD_RELATIVE_TOLERANCE * largest
    if eigvals[0] < floor:
        raise error(f"{name} has eigenvalue {eigvals[0]:.3e} below tolerance {floor:.3e}")
    if eigvals[0] < 0:
        LOGGER.debug("Clamping eigenvalue %.3e of %s to zero", eigvals[0], name)
        clamped = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        return 0.5 * (clamped + clamped.T)
    return values


# ----------------------------------------------------------------------
# Order parameters
# ----------------------------------------------------------------------
def _frozen(array: Any, shape: Tuple[int, int], name: str) -> np.ndarray:
    values = np.array(array, dtype=np.float64)
    if values.shape != shape:
        raise DimensionMismatch(f"{name} must have shape {shape}, got {values.shape}")
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class OrderParameterState:
    """The six saddle-point matrices.

    ``s`` is stored in full with its diagonal holding the self-overlap of a
    student pattern; ``s_hat`` has its diagonal pinned to zero and ``q`` is
    symmetrized on construction.
    """

    m: np.ndarray
    s: np.ndarray
    q: np.ndarray
    m_hat: np.ndarray
    s_hat: np.ndarray
    q_hat: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64)
        if m.ndim != 2:
            raise DimensionMismatch(f"m must be a P*×P matrix, got shape {m.shape}")
        p_star, p = m.shape
        q = np.asarray(self.q, dtype=np.float64)
        q_hat = np.asarray(self.q_hat, dtype=np.float64)
        s_hat = np.array(self.s_hat, dtype=np.float64)
        if s_hat.shape == (p, p):
            np.fill_diagonal(s_hat, 0.0)
        object.__setattr__(self, "m", _frozen(m, (p_star, p), "m"))
        object.__setattr__(self, "s", _frozen(self.s, (p, p), "s"))
        object.__setattr__(self, "q", _frozen((q + q.T) / 2.0, (p, p), "q"))
        object.__setattr__(self, "m_hat", _frozen(self.m_hat, (p_star, p), "m_hat"))
        object.__setattr__(self, "s_hat", _frozen(s_hat, (p, p), "s_hat"))
        object.__setattr__(self, "q_hat", _frozen((q_hat + q_hat.T) / 2.0, (p, p), "q_hat"))

    @property
    def p_star(self) -> int:
        return int(self.m.shape[0])

    @property
    def p(self) -> int:
        return int(self.m.shape[1])

    @classmethod
    def zeros(cls, p_star: int, p: int, s_diagonal: float = 1.0) -> "OrderParameterState":
        return cls(
            m=np.zeros((p_star, p)),
            s=s_diagonal * np.eye(p),
            q=np.zeros((p, p)),
            m_hat=np.zeros((p_star, p)),
            s_hat=np.zeros((p, p)),
            q_hat=np.zeros((p, p)),
        )

    def matrices(self) -> Dict[str, np.ndarray]:
        return {
            "m": self.m,
            "s": self.s,
            "q": self.q,
            "m_hat": self.m_hat,
            "s_hat": self.s_hat,
            "q_hat": self.q_hat,
        }

    def evolve(self, **changes: Any) -> "OrderParameterState":
        return replace(self, **changes)

    def max_abs_change(self, other: "OrderParameterState") -> float:
        return max(
            float(np.max(np.abs(mine - theirs))) if mine.size else 0.0
            for mine, theirs in zip(self.matrices().values(), other.matrices().values())
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(values)) for values in self.matrices().values())

    def permute_students(self, order: Sequence[int]) -> "OrderParameterState":
        """Relabel student hidden units: new unit k is old unit ``order[k]``."""

        idx = np.asarray(order, dtype=int)
        return OrderParameterState(
            m=self.m[:, idx],
            s=self.s[np.ix_(idx, idx)],
            q=self.q[np.ix_(idx, idx)],
            m_hat=self.m_hat[:, idx],
            s_hat=self.s_hat[np.ix_(idx, idx)],
            q_hat=self.q_hat[np.ix_(idx, idx)],
        )

    @classmethod
    def average(cls, states: Sequence["OrderParameterState"]) -> "OrderParameterState":
        if not states:
            raise ParameterOutOfRange("Cannot average an empty sequence of states")
        stacked = {
            name: np.mean([state.matrices()[name] for state in states], axis=0)
            for name in ("m", "s", "q", "m_hat", "s_hat", "q_hat")
        }
        return cls(**stacked)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "OrderParameterState":
        return cls(**{name: np.array(payload[name], dtype=np.float64) for name in ("m", "s", "q", "m_hat", "s_hat", "q_hat")})

    def to_dict(self) -> Dict[str, Any]:
        return {name: values.tolist() for name, values in self.matrices().items()}

    def flat(self, names: Sequence[str] = ("m", "q", "s")) -> Dict[str, float]:
        """Row-major flattening used for CSV columns (``m_0_1`` etc.)."""

        columns: Dict[str, float] = {}
        for name in names:
            values = self.matrices()[name]
            for (row, col), value in np.ndenumerate(values):
                columns[f"{name}_{row}_{col}"] = float(value)
        return columns


# ----------------------------------------------------------------------
# Patterns and data
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PatternMatrix:
    values: np.ndarray
    prior: PatternPrior

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch(f"Patterns must be a 2-D array, got shape {values.shape}")
        if self.prior is PatternPrior.BINARY and not np.all(np.abs(values) == 1.0):
            raise ParameterOutOfRange("Binary patterns must only contain -1 and +1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        return int(self.values.shape[1])

    def rows(self, indices: Sequence[int]) -> "PatternMatrix":
        return PatternMatrix(self.values[np.asarray(indices, dtype=int)], self.prior)


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise DimensionMismatch(f"Dataset must be an M×N array, got shape {samples.shape}")
        if samples.size and not np.all(np.abs(samples) == 1.0):
            raise ParameterOutOfRange("Dataset entries must be -1 or +1")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def m(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n(self) -> int:
        return int(self.samples.shape[1])


# ----------------------------------------------------------------------
# Validation
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CheckedConfiguration:
    hyper: Hyperparameters
    covariance: CovarianceSpec
    q_matrix: np.ndarray


_ERROR_CODES = {
    "ParameterOutOfRange": ParameterOutOfRange,
    "DimensionMismatch": DimensionMismatch,
    "NonPSDCovariance": NonPSDCovariance,
    "EnumerationCapExceeded": EnumerationCapExceeded,
}


def validate(h: Hyperparameters, cov: CovarianceSpec) -> CheckedConfiguration:
    """Check hyperparameters and covariance together.

    Every violation is collected; the error raised is the class of the first
    one and carries the whole list in ``violations``.
    """

    violations: List[Tuple[str, str]] = []

    def flag(code: str, message: str) -> None:
        violations.append((code, message))

    if not h.beta_star > 0:
        flag("ParameterOutOfRange", f"beta_star must be > 0, got {h.beta_star}")
    if not h.beta > 0:
        flag("ParameterOutOfRange", f"beta must be > 0, got {h.beta}")
    if not h.alpha >= 0:
        flag("ParameterOutOfRange", f"alpha must be >= 0, got {h.alpha}")
    if h.p_star < 1 or h.p < 1:
        flag("ParameterOutOfRange", f"p_star and p must be >= 1, got {h.p_star}, {h.p}")
    if h.p_star > ENUMERATION_CAP or h.p > ENUMERATION_CAP:
        flag("EnumerationCapExceeded", f"p_star={h.p_star}, p={h.p} exceed the cap {ENUMERATION_CAP}")
    if cov.kind in (CovarianceKind.UNIFORM, CovarianceKind.WISHART) and not 0.0 <= cov.c <= 1.0:
        flag("ParameterOutOfRange", f"correlation c must lie in [0, 1], got {cov.c}")
    if cov.kind is CovarianceKind.WISHART and cov.c >= 1.0:
        flag("ParameterOutOfRange", "Wishart sampling needs c < 1")
    if cov.size != h.p_star:
        flag("DimensionMismatch", f"Q side {cov.size} differs from p_star {h.p_star}")

    q_matrix = np.empty((0, 0))
    if not violations:
        try:
            q_matrix = clamp_psd(cov.realize(), "Q")
        except NonPSDCovariance as exc:
            flag("NonPSDCovariance", str(exc))
        except ModelError as exc:
            flag(type(exc).__name__, str(exc))
        else:
            if h.teacher_prior is TeacherPrior.BINARY_ARCSINE and not np.allclose(np.diag(q_matrix), 1.0):
                flag("ParameterOutOfRange", "binary teacher patterns need Q with unit diagonal")

    if violations:
        code, message = violations[0]
        error_cls = _ERROR_CODES.get(code, ModelError)
        LOGGER.warning("Configuration rejected: %s", "; ".join(text for _, text in violations))
        raise error_cls(message, violations=violations)
    return CheckedConfiguration(hyper=h, covariance=cov, q_matrix=q_matrix)
