"""Gradient-adaptive stabilization (GAS).

A squared-gradient buffer over the classifier weights drives per-parameter
Gaussian perturbations: parameters with small accumulated gradients get
noise scale close to 1, parameters with large ones get little noise.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import DomainError, ShapeError, StateError, require_same_shape

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-8
EPSILON_SWEEP = (1e-6, 1e-7, 1e-8, 1e-9)
NOISE_VARIANCE_SWEEP = (0.1, 1.0, 10.0)


@dataclass(eq=False)
class NoiseScaleVector:
    scales: np.ndarray

    def __post_init__(self):
        scales = np.array(self.scales, dtype=np.float64)
        if scales.size == 0:
            raise ShapeError("noise scales must be nonempty")
        if np.any(~(scales > 0)) or np.any(scales > 1):
            raise DomainError("noise scales must lie in (0, 1]")
        scales.setflags(write=False)
        self.scales = scales

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.scales.shape

    def to_dict(self) -> Dict[str, Any]:
        return {"shape": list(self.scales.shape), "scales": self.scales.tolist()}


class GradientBuffer:
    """Running sum of squared gradients for one weight matrix within a session.

    Single writer: `accumulate` must not run concurrently with readers.
    """

    def __init__(self, shape: Tuple[int, ...], epsilon: float = DEFAULT_EPSILON):
        if not epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
        self.sums = np.zeros(shape, dtype=np.float64)
        self.step_count = 0
        self.epsilon = float(epsilon)

    @classmethod
    def from_sums(cls, sums: np.ndarray, epsilon: float = DEFAULT_EPSILON, step_count: int = 1) -> "GradientBuffer":
        sums = np.asarray(sums, dtype=np.float64)
        if np.any(sums < 0):
            raise DomainError("accumulated squared gradients must be nonnegative")
        buffer = cls(sums.shape, epsilon)
        buffer.sums = sums.copy()
        buffer.step_count = step_count
        return buffer

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.sums.shape

    def reset(self):
        self.sums = np.zeros_like(self.sums)
        self.step_count = 0

    def accumulate(self, gradients: np.ndarray) -> "GradientBuffer":
        gradients = np.asarray(gradients, dtype=np.float64)
        require_same_shape(gradients, self.sums, "gradient buffer")
        self.sums += gradients ** 2
        self.step_count += 1
        return self

    def noise_scales(self) -> NoiseScaleVector:
        if self.step_count == 0:
            raise StateError("noise scales requested from an empty gradient buffer")
        g_inv = 1.0 / (self.sums + self.epsilon)
        g_min = np.min(g_inv)
        g_max = np.max(g_inv)
        scales = (1.0 + g_inv - g_min) / (1.0 + g_max - g_min)
        return NoiseScaleVector(scales)


def perturb(weights: np.ndarray, scales: Union[NoiseScaleVector, np.ndarray], rng_seed: int,
            noise_std: float = 1.0) -> np.ndarray:
    """W + scales * xi with xi ~ N(0, noise_std^2) drawn from `rng_seed`."""
    if isinstance(scales, NoiseScaleVector):
        scales = scales.scales
    weights = np.asarray(weights, dtype=np.float64)
    require_same_shape(weights, np.asarray(scales), "perturbation")
    if not noise_std > 0:
        raise DomainError(f"noise_std must be positive, got {noise_std}")
    xi = np.random.default_rng(rng_seed).standard_normal(weights.shape)
    return weights + scales * (noise_std * xi)


@dataclass(eq=False)
class QuadraticLandscape:
    eigenvalues: np.ndarray
    optimum: Optional[np.ndarray] = None

    def __post_init__(self):
        eigenvalues = np.array(self.eigenvalues, dtype=np.float64).reshape(-1)
        if eigenvalues.size == 0 or np.any(~(eigenvalues > 0)):
            raise DomainError("curvature eigenvalues must be strictly positive")
        if np.any(np.diff(eigenvalues) > 0):
            raise DomainError("eigenvalues must be sorted in descending order")
        optimum = np.zeros_like(eigenvalues) if self.optimum is None else np.array(self.optimum, dtype=np.float64)
        if optimum.shape != eigenvalues.shape:
            raise ShapeError("optimum must match the eigenvalue dimension")
        self.eigenvalues = eigenvalues
        self.optimum = optimum

    @classmethod
    def random(cls, rng: np.random.Generator, dimension: int, max_condition: float) -> "QuadraticLandscape":
        log_spread = rng.uniform(0.0, math.log(max_condition))
        eigenvalues = np.exp(rng.uniform(0.0, log_spread, size=dimension))
        eigenvalues[0] = math.exp(log_spread)
        return cls(np.sort(eigenvalues)[::-1])

    @property
    def dimension(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_mean(self) -> float:
        return float(np.mean(self.eigenvalues))

    @property
    def condition_number(self) -> float:
        return float(self.eigenvalues[0] / self.eigenvalues[-1])

    def loss(self, theta: np.ndarray) -> np.ndarray:
        diff = np.asarray(theta) - self.optimum
        return 0.5 * np.sum(self.eigenvalues * diff ** 2, axis=-1)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.eigenvalues * (np.asarray(theta) - self.optimum)

    def to_dict(self) -> Dict[str, Any]:
        return {"eigenvalues": self.eigenvalues.tolist(), "optimum": self.optimum.tolist()}


def expected_quadratic_increase(landscape: QuadraticLandscape, scales: np.ndarray) -> float:
    """Exact E[L(theta* + s * xi)] - L(theta*) = 1/2 sum lambda_i s_i^2."""
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != landscape.eigenvalues.shape:
        raise ShapeError(f"scales shape {scales.shape} does not match dimension {landscape.dimension}")
    return float(0.5 * np.sum(landscape.eigenvalues * scales ** 2))


def monte_carlo_quadratic_increase(landscape: QuadraticLandscape, scales: np.ndarray, draws: int,
                                   seed: int) -> Tuple[float, float]:
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != landscape.eigenvalues.shape:
        raise ShapeError(f"scales shape {scales.shape} does not match dimension {landscape.dimension}")
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((draws, landscape.dimension))
    increases = landscape.loss(landscape.optimum + scales * xi)
    return float(np.mean(increases)), float(np.std(increases, ddof=1) / math.sqrt(draws))


def gas_budget_scales(landscape: QuadraticLandscape, rho_radius: float) -> np.ndarray:
    """Scales with s_i^2 = rho^2 / (lambda_i sum_j 1/lambda_j), so sum s_i^2 = rho^2."""
    if not rho_radius > 0:
        raise DomainError(f"rho_radius must be positive, got {rho_radius}")
    inverse = 1.0 / landscape.eigenvalues
    return np.sqrt(rho_radius ** 2 * inverse / np.sum(inverse))


def sam_perturbation(landscape: QuadraticLandscape, theta: np.ndarray, rho_radius: float) -> np.ndarray:
    """One-step adversarial perturbation rho * grad / ||grad|| on the quadratic."""
    if not rho_radius > 0:
        raise DomainError(f"rho_radius must be positive, got {rho_radius}")
    grad = landscape.gradient(theta)
    norm = np.linalg.norm(grad)
    if norm == 0:
        raise StateError("gradient vanishes at theta; the adversarial direction is undefined")
    return rho_radius * grad / norm


@dataclass
class AdversarialComparison:
    delta_adv: float
    delta_gas: float
    ratio: float

    def to_dict(self) -> Dict[str, float]:
        return {"delta_adv": self.delta_adv, "delta_gas": self.delta_gas, "ratio": self.ratio}


def adversarial_comparison(landscape: QuadraticLandscape, rho_radius: float) -> AdversarialComparison:
    if not rho_radius > 0:
        raise DomainError(f"rho_radius must be positive, got {rho_radius}")
    delta_adv = 0.5 * rho_radius ** 2 * landscape.lambda_max
    delta_gas = rho_radius ** 2 * landscape.dimension / (2.0 * np.sum(1.0 / landscape.eigenvalues))
    return AdversarialComparison(delta_adv=float(delta_adv), delta_gas=float(delta_gas),
                                 ratio=float(delta_adv / delta_gas))
