"""Diagonal-Gaussian posterior algebra.

Houses the variance-ratio function, KL divergences between diagonal
Gaussians, the posterior constructions compared against the Laplace
posterior (GAS, isotropic, static, memory-based) and the PAC-Bayes gap.
Every function is pure; arrays stored on the value types are read-only.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import DomainError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def _frozen_vector(values, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(-1)
    if array.size < 1:
        raise ShapeError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} must be finite")
    array.setflags(write=False)
    return array


def f_ratio(x: ArrayLike) -> ArrayLike:
    """x - ln(x) - 1, the per-coordinate KL contribution of a variance ratio."""
    values = np.asarray(x, dtype=np.float64)
    if np.any(~(values > 0)):
        raise DomainError(f"f_ratio requires x > 0, got min {np.min(values)}")
    result = values - np.log(values) - 1.0
    if np.ndim(result) == 0:
        return float(result)
    return result


@dataclass(frozen=True, eq=False)
class DiagonalGaussian:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = _frozen_vector(self.mean, "mean")
        variance = _frozen_vector(self.variance, "variance")
        if mean.shape != variance.shape:
            raise ShapeError(f"mean and variance dimensions differ: {mean.size} vs {variance.size}")
        if np.any(variance <= 0):
            raise DomainError("variance entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def dimension(self) -> int:
        return int(self.mean.size)

    @classmethod
    def centered(cls, variance) -> "DiagonalGaussian":
        variance = np.asarray(variance, dtype=np.float64)
        return cls(mean=np.zeros_like(variance), variance=variance)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.mean + np.sqrt(self.variance) * rng.standard_normal((count, self.dimension))

    def log_density(self, points: np.ndarray) -> np.ndarray:
        diff = points - self.mean
        return -0.5 * np.sum(diff ** 2 / self.variance + np.log(2.0 * math.pi * self.variance), axis=-1)


@dataclass(frozen=True, eq=False)
class FisherDiagonal:
    values: np.ndarray
    f_min: Optional[float] = None
    f_max: Optional[float] = None

    def __post_init__(self):
        values = _frozen_vector(self.values, "fisher")
        if np.any(values <= 0):
            raise DomainError("Fisher diagonal entries must be strictly positive")
        if self.f_min is not None and self.f_max is not None and not (0 < self.f_min <= self.f_max):
            raise DomainError(f"invalid Fisher bounds [{self.f_min}, {self.f_max}]")
        if self.f_min is not None and np.any(values < self.f_min):
            raise DomainError(f"Fisher entry below f_min={self.f_min}")
        if self.f_max is not None and np.any(values > self.f_max):
            raise DomainError(f"Fisher entry above f_max={self.f_max}")
        object.__setattr__(self, "values", values)

    @property
    def dimension(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def variance(self) -> float:
        return float(np.var(self.values))

    def laplace_posterior(self, optimum: Optional[np.ndarray] = None) -> DiagonalGaussian:
        """True posterior N(theta*, diag(1/F_ii)); theta* defaults to the origin."""
        mean = np.zeros(self.dimension) if optimum is None else optimum
        return DiagonalGaussian(mean=mean, variance=1.0 / self.values)


def kl_diag(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    if q.dimension != p.dimension:
        raise ShapeError(f"KL dimension mismatch: {q.dimension} vs {p.dimension}")
    ratio = q.variance / p.variance
    if np.any(~(ratio > 0)) or not np.all(np.isfinite(ratio)):
        raise DomainError("variance ratio underflowed or overflowed")
    mahalanobis = (q.mean - p.mean) ** 2 / p.variance
    return float(0.5 * np.sum(mahalanobis + f_ratio(ratio)))


def variance_only_kl(var_q: np.ndarray, var_p: np.ndarray) -> float:
    var_q = np.asarray(var_q, dtype=np.float64)
    var_p = np.asarray(var_p, dtype=np.float64)
    if var_q.shape != var_p.shape:
        raise ShapeError(f"variance shape mismatch: {var_q.shape} vs {var_p.shape}")
    return float(0.5 * np.sum(f_ratio(var_q / var_p)))


def kl_monte_carlo(q: DiagonalGaussian, p: DiagonalGaussian, samples: int, seed: int) -> Tuple[float, float]:
    """Estimate E_q[log q - log p]; returns (estimate, standard error)."""
    if q.dimension != p.dimension:
        raise ShapeError(f"KL dimension mismatch: {q.dimension} vs {p.dimension}")
    rng = np.random.default_rng(seed)
    draws = q.sample(rng, samples)
    log_ratio = q.log_density(draws) - p.log_density(draws)
    return float(np.mean(log_ratio)), float(np.std(log_ratio, ddof=1) / math.sqrt(samples))


class RegularizerKind(Enum):
    GAS = "gas"
    ISOTROPIC = "isotropic"
    STATIC = "static"
    MEMORY = "memory"


@dataclass(frozen=True, eq=False)
class PosteriorMode:
    kind: RegularizerKind
    scale: float
    fisher_hist: Optional[np.ndarray] = None
    approx_error: Optional[np.ndarray] = None

    @classmethod
    def gas(cls, c: float = 1.0, approx_error: Optional[np.ndarray] = None) -> "PosteriorMode":
        return cls(RegularizerKind.GAS, c, approx_error=approx_error)

    @classmethod
    def isotropic(cls, c: float = 1.0) -> "PosteriorMode":
        return cls(RegularizerKind.ISOTROPIC, c)

    @classmethod
    def static(cls, lam: float) -> "PosteriorMode":
        return cls(RegularizerKind.STATIC, lam)

    @classmethod
    def memory(cls, lam: float, fisher_hist: np.ndarray) -> "PosteriorMode":
        return cls(RegularizerKind.MEMORY, lam, fisher_hist=np.asarray(fisher_hist, dtype=np.float64))


def optimal_gas_scale(approx_error: np.ndarray) -> float:
    """KL-minimising normalisation c = d / sum(1 + eta_i)."""
    approx_error = np.asarray(approx_error, dtype=np.float64)
    if np.any(np.abs(approx_error) >= 1):
        raise DomainError("approximation errors must satisfy |eta_i| < 1")
    return float(approx_error.size / np.sum(1.0 + approx_error))


def posterior_variances(fisher: FisherDiagonal, mode: PosteriorMode) -> np.ndarray:
    if not mode.scale > 0:
        raise DomainError(f"{mode.kind.value} scale parameter must be positive, got {mode.scale}")

    if mode.kind == RegularizerKind.GAS:
        variances = mode.scale / fisher.values
        if mode.approx_error is not None:
            approx_error = np.asarray(mode.approx_error, dtype=np.float64)
            if approx_error.shape != fisher.values.shape:
                raise ShapeError("approx_error must match the Fisher dimension")
            if np.any(np.abs(approx_error) >= 1):
                raise DomainError("approximation errors must satisfy |eta_i| < 1")
            variances = variances * (1.0 + approx_error)
    elif mode.kind == RegularizerKind.ISOTROPIC:
        variances = np.full(fisher.dimension, mode.scale / fisher.mean)
    elif mode.kind == RegularizerKind.STATIC:
        variances = np.full(fisher.dimension, 1.0 / mode.scale)
    elif mode.kind == RegularizerKind.MEMORY:
        if mode.fisher_hist is None or mode.fisher_hist.shape != fisher.values.shape:
            raise ShapeError("memory mode requires fisher_hist with the Fisher dimension")
        if np.any(mode.fisher_hist <= 0):
            raise DomainError("historical Fisher entries must be strictly positive")
        variances = 1.0 / (mode.scale * mode.fisher_hist)
    else:
        raise DomainError(f"Unknown posterior mode: {mode.kind}")

    if np.any(~(variances > 0)) or not np.all(np.isfinite(variances)):
        raise DomainError(f"{mode.kind.value} posterior variance underflowed")
    return variances


@dataclass
class KlComparisonReport:
    kl_gas: float
    kl_iso: float
    fisher_variance: float
    kl_static: Optional[float] = None
    kl_memory: Optional[float] = None

    def to_dict(self) -> Dict[str, float]:
        result = {
            "kl_gas": self.kl_gas,
            "kl_iso": self.kl_iso,
            "kl_static": self.kl_static,
            "kl_memory": self.kl_memory,
            "fisher_variance": self.fisher_variance,
        }
        return {key: value for key, value in result.items() if value is not None}


@dataclass
class ComparisonOptions:
    gas_scale: float = 1.0
    optimal_gas_scale: bool = False
    approx_error: Optional[np.ndarray] = None
    static_lambda: Optional[float] = None
    memory_lambda: Optional[float] = None
    fisher_hist: Optional[np.ndarray] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def kl_comparison(fisher_current: FisherDiagonal, options: Optional[ComparisonOptions] = None) -> KlComparisonReport:
    """KL of each candidate posterior to N(theta*, diag(1/F)), all sharing the mean theta*.

    The isotropic candidate uses the same normalisation c as GAS so the
    comparison isolates the variance allocation.
    """
    options = options or ComparisonOptions()
    truth = fisher_current.laplace_posterior()

    c = options.gas_scale
    if options.optimal_gas_scale:
        if options.approx_error is None:
            raise DomainError("optimal GAS scale requires approx_error")
        c = optimal_gas_scale(options.approx_error)

    def kl_for(mode: PosteriorMode) -> float:
        candidate = DiagonalGaussian(mean=truth.mean, variance=posterior_variances(fisher_current, mode))
        return kl_diag(candidate, truth)

    report = KlComparisonReport(
        kl_gas=kl_for(PosteriorMode.gas(c, options.approx_error)),
        kl_iso=kl_for(PosteriorMode.isotropic(c)),
        fisher_variance=fisher_current.variance,
    )
    if options.static_lambda is not None:
        report.kl_static = kl_for(PosteriorMode.static(options.static_lambda))
    if options.memory_lambda is not None:
        if options.fisher_hist is None:
            raise ShapeError("memory comparison requires fisher_hist")
        report.kl_memory = kl_for(PosteriorMode.memory(options.memory_lambda, options.fisher_hist))

    logger.debug(f"KL comparison d={fisher_current.dimension}: {report.to_dict()}")
    return report


def fisher_mismatch(fisher: FisherDiagonal, reference_precision: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Relative mismatch rho_i = (F_ii - P_i) / F_ii and the KL-calibrated score.

    `reference_precision` is the competitor's per-parameter precision 1/sigma^2
    (lambda for static regularizers, lambda * F_hist for memory-based ones).
    The score m_i = (r_i - 1)^2 / max(1, r_i) with r_i = F_ii / P_i lower
    bounds 2 f(r_i).
    """
    reference_precision = np.broadcast_to(np.asarray(reference_precision, dtype=np.float64), fisher.values.shape)
    if np.any(reference_precision <= 0):
        raise DomainError("reference precision must be strictly positive")
    relative = (fisher.values - reference_precision) / fisher.values
    ratio = fisher.values / reference_precision
    score = (ratio - 1.0) ** 2 / np.maximum(1.0, ratio)
    return relative, score


def mismatch_exceeds_approx_error(mismatch_scores: np.ndarray, approx_error_bound: float) -> bool:
    """True when mean(m_i) > delta^2 / (1 - delta).

    Under |eta_i| <= delta the GAS KL is at most d delta^2 / (4 (1 - delta)),
    while the competitor KL is at least sum(m_i) / 4, so the condition
    guarantees a strict ordering.
    """
    if not 0 <= approx_error_bound < 1:
        raise DomainError(f"approx_error bound must lie in [0, 1), got {approx_error_bound}")
    threshold = approx_error_bound ** 2 / (1.0 - approx_error_bound)
    return bool(np.mean(mismatch_scores) > threshold)


def domain_shift_magnitude(fisher_before: FisherDiagonal, fisher_after: FisherDiagonal) -> float:
    if fisher_before.dimension != fisher_after.dimension:
        raise ShapeError("Fisher dimensions differ across the shift")
    return float(np.sqrt(np.mean((fisher_after.values - fisher_before.values) ** 2)))


def pac_bayes_gap(kl: float, n: int, confidence_delta: float) -> float:
    """sqrt((KL + ln(2 sqrt(n) / delta)) / (2n))."""
    if kl < 0 or not math.isfinite(kl):
        raise DomainError(f"kl must be a finite nonnegative number, got {kl}")
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    if not 0 < confidence_delta < 1:
        raise DomainError(f"confidence_delta must lie in (0, 1), got {confidence_delta}")
    return math.sqrt((kl + math.log(2.0 * math.sqrt(n) / confidence_delta)) / (2.0 * n))


def pac_bayes_bound(empirical_risk: float, kl: float, n: int, confidence_delta: float) -> float:
    return empirical_risk + pac_bayes_gap(kl, n, confidence_delta)
