"""Pseudo-label error dynamics.

Linear recurrences for the teacher error under an EMA teacher with and
without validation filtering, their closed-form limits, the precision
algebra of combining two filters, memory-bank error accumulation and a
binomial Monte-Carlo simulation that checks the recurrences independently.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as scipy_stats

from errors import DomainError

logger = logging.getLogger(__name__)

CONVERGENCE_TOLERANCE = 1e-12
MAX_ITERATIONS = 10 ** 6
AUDIT_GRID_POINTS = 1024
MIN_POPULATION = 1000


class Mode(Enum):
    UNFILTERED = "unfiltered"
    FILTERED = "filtered"


def _check_range(name: str, value: float, low: float, high: float, low_open: bool = False, high_open: bool = False):
    below = value <= low if low_open else value < low
    above = value >= high if high_open else value > high
    if not math.isfinite(value) or below or above:
        left = "(" if low_open else "["
        right = ")" if high_open else "]"
        raise DomainError(f"{name} must lie in {left}{low}, {high}{right}, got {value}")


@dataclass(frozen=True)
class DynamicsParams:
    epsilon0: float
    gamma: float
    alpha: float
    f: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        _check_range("epsilon0", self.epsilon0, 0.0, 1.0, low_open=True, high_open=True)
        _check_range("gamma", self.gamma, 0.0, 1.0, low_open=True, high_open=True)
        _check_range("alpha", self.alpha, 0.0, 1.0, high_open=True)
        _check_range("f", self.f, 0.0, 1.0)
        _check_range("rho", self.rho, 0.0, 1.0)

    @property
    def lam(self) -> float:
        return self.alpha + (1.0 - self.alpha) * self.gamma

    @property
    def lam_eff(self) -> float:
        return self.alpha + (1.0 - self.alpha) * self.f * self.gamma * (1.0 - self.rho)

    def with_values(self, **changes) -> "DynamicsParams":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, float]:
        return {"epsilon0": self.epsilon0, "gamma": self.gamma, "alpha": self.alpha, "f": self.f, "rho": self.rho}


def step(eps_t: float, params: DynamicsParams, mode: Mode = Mode.FILTERED) -> float:
    _check_range("eps_t", eps_t, 0.0, 1.0)
    a, g, e0 = params.alpha, params.gamma, params.epsilon0
    if mode is Mode.UNFILTERED:
        return params.lam * eps_t + (1.0 - a) * (1.0 - g) * e0
    return params.lam_eff * eps_t + (1.0 - a) * (1.0 - params.f * g) * e0


def asymptotic_error(params: DynamicsParams, mode: Mode = Mode.FILTERED) -> float:
    if mode is Mode.UNFILTERED:
        return params.epsilon0
    fg = params.f * params.gamma
    # rho = 0 and rho = 1 reduce exactly to epsilon0 and (1 - fg) epsilon0
    return params.epsilon0 * ((1.0 - fg) / (1.0 - fg * (1.0 - params.rho)))


def improvement_threshold(f: float, gamma: float) -> float:
    """Precision above which filtered training beats the supervised error."""
    if f == 0:
        raise DomainError("coverage f = 0 disables pseudo-labels; no threshold exists")
    _check_range("f", f, 0.0, 1.0, low_open=True)
    _check_range("gamma", gamma, 0.0, 1.0, low_open=True, high_open=True)
    fg = f * gamma
    return (2.0 * fg - 1.0) / fg


def trajectory(params: DynamicsParams, mode: Mode = Mode.FILTERED, steps: int = 100,
               start: Optional[float] = None) -> List[float]:
    """Teacher error e_0 ... e_steps under the deterministic recurrence."""
    eps = params.epsilon0 if start is None else start
    values = [eps]
    for _ in range(steps):
        eps = step(eps, params, mode)
        values.append(eps)
    return values


def iterate_to_convergence(params: DynamicsParams, mode: Mode = Mode.FILTERED,
                           start: Optional[float] = None) -> Tuple[float, int]:
    eps = params.epsilon0 if start is None else start
    for iteration in range(1, MAX_ITERATIONS + 1):
        nxt = step(eps, params, mode)
        if abs(nxt - eps) < CONVERGENCE_TOLERANCE:
            return nxt, iteration
        eps = nxt
    logger.warning(f"recurrence did not converge within {MAX_ITERATIONS} iterations for {params}")
    return eps, MAX_ITERATIONS


def convergence_step_bound(params: DynamicsParams, tolerance: float = 1e-9) -> int:
    if params.lam_eff == 0:
        return 1
    return math.ceil(math.log(tolerance) / math.log(params.lam_eff))


@dataclass(frozen=True)
class CriteriaStats:
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    pi: float

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "beta1", "beta2"):
            _check_range(name, getattr(self, name), 0.0, 1.0, low_open=True)
        _check_range("pi", self.pi, 0.0, 1.0, low_open=True, high_open=True)

    @property
    def likelihood_ratio1(self) -> float:
        return self.alpha1 / self.beta1

    @property
    def likelihood_ratio2(self) -> float:
        return self.alpha2 / self.beta2


@dataclass
class DualPrecision:
    rho1: float
    rho12: float
    gain: float

    def to_dict(self) -> Dict[str, float]:
        return {"rho1": self.rho1, "rho12": self.rho12, "gain": self.gain}


def dual_precision(stats: CriteriaStats) -> DualPrecision:
    pi = stats.pi
    rho1 = stats.alpha1 * pi / (stats.alpha1 * pi + stats.beta1 * (1.0 - pi))
    joint_tp = stats.alpha1 * stats.alpha2 * pi
    rho12 = joint_tp / (joint_tp + stats.beta1 * stats.beta2 * (1.0 - pi))
    return DualPrecision(rho1=rho1, rho12=rho12, gain=rho12 / rho1)


def precision_gain_closed_form(stats: CriteriaStats) -> float:
    r = (1.0 - stats.pi) / stats.pi
    lr1, lr2 = stats.likelihood_ratio1, stats.likelihood_ratio2
    return (1.0 + r / lr1) / (1.0 + r / (lr1 * lr2))


@dataclass
class MethodComparison:
    no_filter: float
    confidence_only: float
    consistency_based: float
    pas: float
    precisions: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "no_filter": self.no_filter,
            "confidence_only": self.confidence_only,
            "consistency_based": self.consistency_based,
            "pas": self.pas,
            "precisions": dict(self.precisions),
        }


def compare_methods(stats: CriteriaStats, f: float, gamma: float, epsilon0: float,
                    alpha: float = 0.9) -> MethodComparison:
    """Asymptotic teacher error of each filtering strategy.

    Confidence-only and PAS share coverage `f`; the consistency-based
    baseline accepts everything at the base precision.
    """
    precision = dual_precision(stats)
    base = DynamicsParams(epsilon0=epsilon0, gamma=gamma, alpha=alpha, f=f)
    return MethodComparison(
        no_filter=asymptotic_error(base, Mode.UNFILTERED),
        confidence_only=asymptotic_error(base.with_values(rho=precision.rho1)),
        consistency_based=asymptotic_error(base.with_values(f=1.0, rho=stats.pi)),
        pas=asymptotic_error(base.with_values(rho=precision.rho12)),
        precisions={"confidence_only": precision.rho1, "consistency_based": stats.pi, "pas": precision.rho12},
    )


def piecewise_linear_response(knots: Sequence[Tuple[float, float]]) -> Callable[[float], float]:
    """Error response g interpolating `knots`, which must span [0, 1]."""
    xs = np.array([k[0] for k in knots], dtype=np.float64)
    ys = np.array([k[1] for k in knots], dtype=np.float64)
    if xs.size < 2 or xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
        raise DomainError("knots must be strictly increasing in x from 0 to 1")
    if np.any(ys < 0) or np.any(ys > 1):
        raise DomainError("knot values must lie in [0, 1]")

    def response(e):
        return np.interp(e, xs, ys)

    return response


class MemoryBankModel:
    """e_{t+1} = (1 - eta) e_t + eta g(e_t) for a self-reinforcing response g."""

    def __init__(self, eta: float, g: Callable[[float], float], e0: float = 0.0, require_positive_base: bool = True):
        _check_range("eta", eta, 0.0, 1.0, low_open=True)
        _check_range("e0", e0, 0.0, 1.0)
        grid = np.linspace(0.0, 1.0, AUDIT_GRID_POINTS)
        values = np.asarray([g(e) for e in grid], dtype=np.float64)
        if np.any(values < grid) or np.any(values > 1.0) or np.any(values < 0.0):
            worst = int(np.argmin(values - grid))
            raise DomainError(f"error response violates e <= g(e) <= 1 at e = {grid[worst]:.6f}")
        if require_positive_base and not values[0] > 0:
            raise DomainError("error response must satisfy g(0) > 0")
        self.eta = eta
        self.g = g
        self.e0 = e0

    def next_error(self, e: float) -> float:
        return (1.0 - self.eta) * e + self.eta * float(self.g(e))


def memory_bank_trajectory(model: MemoryBankModel, steps: int) -> List[float]:
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    values = [model.e0]
    for _ in range(steps):
        values.append(model.next_error(values[-1]))
    return values


def crossover_step(model: MemoryBankModel, rho_pas: float, horizon: int) -> Optional[int]:
    """First step t with rho_pas > 1 - e_t; memory-bank precision never recovers afterwards."""
    for t, e in enumerate(memory_bank_trajectory(model, horizon)):
        if rho_pas > 1.0 - e:
            return t
    return None


@dataclass
class MonteCarloTrajectory:
    analytic: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    replicates: int

    def deviations(self) -> np.ndarray:
        return np.abs(self.mean - self.analytic)

    def within_band(self, band: float = 3.0, atol: float = 1e-12) -> bool:
        return bool(np.all(self.deviations() <= band * self.stderr + atol))

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"step": t, "analytic": float(a), "mc_mean": float(m), "mc_stderr": float(s)}
            for t, (a, m, s) in enumerate(zip(self.analytic, self.mean, self.stderr))
        ]


def corrected_band(steps: int, replicates: int, family_alpha: float = 0.01) -> float:
    """Student-t band width holding a family-wise error rate over all checked steps."""
    if replicates < 2:
        raise DomainError("a standard-error band needs at least two replicates")
    return float(scipy_stats.t.ppf(1.0 - family_alpha / (2.0 * max(steps, 1)), df=replicates - 1))


def _simulate_replicate(params: DynamicsParams, population: int, steps: int, start: float,
                        rng: np.random.Generator) -> np.ndarray:
    fg = params.f * params.gamma
    pseudo_error_factor = 1.0 - params.rho
    errors = np.empty(steps + 1)
    errors[0] = e = start
    for t in range(1, steps + 1):
        n_pseudo = rng.binomial(population, fg)
        n_labeled = population - n_pseudo
        wrong = rng.binomial(n_labeled, params.epsilon0) + rng.binomial(n_pseudo, pseudo_error_factor * e)
        e = params.alpha * e + (1.0 - params.alpha) * wrong / population
        errors[t] = e
    return errors


def monte_carlo_oracle(params: DynamicsParams, population: int, steps: int, replicates: int, seed: int,
                       start: Optional[float] = None) -> MonteCarloTrajectory:
    """Item-level simulation of the filtered recurrence.

    Each round a fraction f*gamma of the items carries a pseudo-label that is
    wrong with probability (1 - rho) e_t; the rest carry labels wrong with
    probability epsilon0. The teacher tracks the empirical student error by EMA.
    """
    if population < MIN_POPULATION:
        raise DomainError(f"population must be >= {MIN_POPULATION}, got {population}")
    if replicates < 2:
        raise DomainError("at least two replicates are needed for standard errors")
    start = params.epsilon0 if start is None else start
    children = np.random.SeedSequence(seed).spawn(replicates)
    runs = np.stack([
        _simulate_replicate(params, population, steps, start, np.random.default_rng(child))
        for child in children
    ])
    analytic = np.asarray(trajectory(params, Mode.FILTERED, steps, start))
    logger.debug(f"monte carlo oracle: {replicates} replicates x {steps} steps, population {population}")
    return MonteCarloTrajectory(
        analytic=analytic,
        mean=runs.mean(axis=0),
        stderr=runs.std(axis=0, ddof=1) / math.sqrt(replicates),
        replicates=replicates,
    )


def precision_sweep(params: DynamicsParams, rhos: Sequence[float]) -> List[Dict[str, Any]]:
    threshold = improvement_threshold(params.f, params.gamma) if params.f > 0 else None
    rows = []
    for rho in rhos:
        limit = asymptotic_error(params.with_values(rho=float(rho)))
        rows.append({
            "rho": float(rho),
            "asymptotic_error": limit,
            "improves": limit < params.epsilon0,
            "threshold": threshold,
        })
    return rows


def coverage_precision_heatmap(params: DynamicsParams, f_grid: Sequence[float],
                               rho_grid: Sequence[float]) -> List[Dict[str, float]]:
    return [
        {"f": float(f), "rho": float(rho),
         "asymptotic_error": asymptotic_error(params.with_values(f=float(f), rho=float(rho)))}
        for f in f_grid for rho in rho_grid
    ]
