"""Invariant suites behind `validate-theory`.

Each check is a named, seeded property test over one mechanism module.
The engine runs them by kind and returns pass/fail records with the
metrics a reader needs to see how close a check came to failing.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import dynamics
import gas
import numerics
import pas
from bench_metrics import total_drop
from run_config import CriteriaSection, ValidateTheorySection
from seeding import derive_seed, named_stream

logger = logging.getLogger(__name__)


class CheckKind(Enum):
    NUMERICS = "numerics"
    GAS = "gas"
    PAS = "pas"
    DYNAMICS = "dynamics"
    METRICS = "metrics"


@dataclass
class CheckResult:
    name: str
    kind: CheckKind
    passed: bool
    detail: str
    metrics: Dict[str, Any] = field(default_factory=dict)
    duration_seconds: float = 0.0

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> Dict[str, Any]:
        # duration is wall-clock and stays out of the persisted summary
        return {
            "name": self.name,
            "kind": self.kind.value,
            "status": self.status,
            "detail": self.detail,
            "metrics": self.metrics,
        }


def _result(name: str, kind: CheckKind, failures: Sequence[str], trials: int, **metrics) -> CheckResult:
    passed = not failures
    detail = f"{trials} cases hold" if passed else f"{len(failures)} of {trials} cases fail; first: {failures[0]}"
    return CheckResult(name=name, kind=kind, passed=passed, detail=detail,
                       metrics={"trials": trials, "failures": len(failures), **metrics})


class InvariantCheck:
    def __init__(self, name: str, kind: CheckKind, description: str, run: Callable[[np.random.Generator], CheckResult]):
        self.name = name
        self.kind = kind
        self.description = description
        self.run = run


class TheoryCheckEngine:
    """Registry of invariant checks; every check draws from its own named stream."""

    def __init__(self, config: Optional[ValidateTheorySection] = None, seed: int = 0,
                 criteria: Optional[CriteriaSection] = None):
        self.config = config or ValidateTheorySection()
        self.criteria = criteria or CriteriaSection()
        self.seed = seed
        self.checks: Dict[str, InvariantCheck] = {}
        self._load_default_checks()

    def _register(self, name: str, kind: CheckKind, description: str,
                  run: Callable[[np.random.Generator], CheckResult]):
        self.checks[name] = InvariantCheck(name, kind, description, run)

    def _load_default_checks(self):
        n = CheckKind.NUMERICS
        self._register("f_ratio_bounds", n, "f(x) is nonnegative, zero only at 1, and sandwiched by curvature bounds",
                       self._check_f_ratio_bounds)
        self._register("kl_self_zero", n, "KL(q || q) = 0", self._check_kl_self_zero)
        self._register("kl_monte_carlo", n, "closed-form diagonal KL matches a Monte-Carlo estimate",
                       self._check_kl_monte_carlo)
        self._register("jensen_strictness", n, "GAS beats isotropic under heterogeneous Fisher, ties when homogeneous",
                       self._check_jensen_strictness)
        self._register("static_memory_ordering", n, "GAS beats static and memory regularizers past the mismatch bound",
                       self._check_static_memory_ordering)
        self._register("pac_bayes_hand_case", n, "PAC-Bayes gap closed form", self._check_pac_bayes_hand_case)

        g = CheckKind.GAS
        self._register("noise_scale_range", g, "noise scales lie in (0, 1] with maximum exactly 1",
                       self._check_noise_scale_range)
        self._register("perturb_reproducible", g, "perturbation is bit-exact for a fixed seed",
                       self._check_perturb_reproducible)
        self._register("quadratic_increase", g, "expected loss increase equals half the curvature-weighted variance",
                       self._check_quadratic_increase)
        self._register("adversarial_ratio", g, "adversarial/GAS increase ratio lies in [1, kappa]",
                       self._check_adversarial_ratio)

        p = CheckKind.PAS
        self._register("prototype_hand_cases", p, "prototypes normalize per sample then average",
                       self._check_prototype_hand_cases)
        self._register("validation_invariance", p, "validation ignores feature scale and logit shift",
                       self._check_validation_invariance)
        self._register("threshold_monotonicity", p, "raising a threshold never accepts more pixels",
                       self._check_threshold_monotonicity)
        self._register("consistency_cases", p, "consistency loss trivial and hand cases",
                       self._check_consistency_cases)
        self._register("dual_criteria_precision", p, "similarity filtering raises measured precision",
                       self._check_dual_criteria_precision)

        d = CheckKind.DYNAMICS
        self._register("asymptotic_limit", d, "iterated recurrence converges to the closed-form limit",
                       self._check_asymptotic_limit)
        self._register("precision_monotonicity", d, "limit decreases in precision and improves past the threshold",
                       self._check_precision_monotonicity)
        self._register("dual_precision_sign", d, "second criterion helps iff alpha2 > beta2",
                       self._check_dual_precision_sign)
        self._register("method_ordering", d, "higher filter precision yields lower limiting error",
                       self._check_method_ordering)
        self._register("memory_bank_monotone", d, "memory-bank error never decreases",
                       self._check_memory_bank_monotone)
        if self.config.monte_carlo:
            self._register("monte_carlo_oracle", d, "item-level simulation agrees with the recurrence",
                           self._check_monte_carlo_oracle)

        self._register("total_drop_formula", CheckKind.METRICS, "Total Drop reproduces reference values",
                       self._check_total_drop_formula)

    def list_checks(self) -> List[Dict[str, str]]:
        return [{"name": c.name, "kind": c.kind.value, "description": c.description} for c in self.checks.values()]

    def run_check(self, name: str) -> CheckResult:
        check = self.checks[name]
        rng = named_stream(self.seed, f"theory/{name}")
        start = time.perf_counter()
        try:
            result = check.run(rng)
        except Exception as e:
            logger.exception(f"Check {name} raised")
            result = CheckResult(name=name, kind=check.kind, passed=False, detail=f"raised {type(e).__name__}: {e}")
        result.duration_seconds = time.perf_counter() - start
        logger.info(f"check {name}: {result.status} ({result.duration_seconds:.2f}s) {result.detail}")
        return result

    def run(self, kinds: Optional[Sequence[CheckKind]] = None) -> List[CheckResult]:
        selected = [c.name for c in self.checks.values() if kinds is None or c.kind in kinds]
        return [self.run_check(name) for name in selected]

    @staticmethod
    def summary(results: Sequence[CheckResult]) -> Dict[str, Any]:
        failed = [r.name for r in results if not r.passed]
        return {
            "passed": not failed,
            "total": len(results),
            "failed": failed,
            "checks": [r.to_dict() for r in results],
        }

    # numerics

    def _check_f_ratio_bounds(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        xs = rng.uniform(0.5, 1.5, size=self.config.kl_trials)
        values = numerics.f_ratio(xs)
        for x, fx in zip(xs, values):
            sq = (x - 1.0) ** 2
            # f'' = 1/x^2 bounds the curvature between 1/max(1,x)^2 and 1/min(1,x)^2
            lower = 0.5 * sq / max(1.0, x) ** 2
            if not (fx >= 0.0 and lower - 1e-15 <= fx <= sq + 1e-15):
                failures.append(f"x={x:.6f} f={fx:.3e} outside [{lower:.3e}, {sq:.3e}]")
        if numerics.f_ratio(1.0) != 0.0:
            failures.append("f(1) != 0")
        return _result("f_ratio_bounds", CheckKind.NUMERICS, failures, len(xs) + 1)

    def _check_kl_self_zero(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        trials = 100
        worst = 0.0
        for _ in range(trials):
            d = int(rng.integers(1, 20))
            q = numerics.DiagonalGaussian(rng.normal(size=d), np.exp(rng.uniform(-3, 3, size=d)))
            kl = numerics.kl_diag(q, q)
            worst = max(worst, abs(kl))
            if abs(kl) >= 1e-12:
                failures.append(f"d={d} kl={kl:.3e}")
        return _result("kl_self_zero", CheckKind.NUMERICS, failures, trials, worst=worst)

    def _check_kl_monte_carlo(self, rng: np.random.Generator) -> CheckResult:
        cases = 20
        samples = 200_000
        band = dynamics.corrected_band(cases, samples)
        failures = []
        worst = 0.0
        for index in range(cases):
            d = int(rng.integers(1, 6))
            q = numerics.DiagonalGaussian(rng.normal(scale=0.5, size=d), rng.uniform(0.5, 2.0, size=d))
            p = numerics.DiagonalGaussian(rng.normal(scale=0.5, size=d), rng.uniform(0.5, 2.0, size=d))
            exact = numerics.kl_diag(q, p)
            estimate, stderr = numerics.kl_monte_carlo(q, p, samples, derive_seed(self.seed, f"theory/kl_mc/{index}"))
            z = abs(estimate - exact) / stderr
            worst = max(worst, z)
            if z > band:
                failures.append(f"case {index}: exact {exact:.5f} vs mc {estimate:.5f} ({z:.2f} stderr)")
        return _result("kl_monte_carlo", CheckKind.NUMERICS, failures, cases, band=band, worst_z=worst)

    def _check_jensen_strictness(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        min_margin = math.inf
        n_samples, confidence = 1000, 0.05
        for _ in range(self.config.kl_trials):
            d = int(rng.integers(2, 21))
            fisher = numerics.FisherDiagonal(np.exp(rng.uniform(-4, 4, size=d)))
            report = numerics.kl_comparison(fisher)
            margin = report.kl_iso - report.kl_gas
            min_margin = min(min_margin, margin)
            if not margin > 0:
                failures.append(f"d={d} kl_gas={report.kl_gas:.3e} kl_iso={report.kl_iso:.3e}")
            elif not (numerics.pac_bayes_gap(report.kl_gas, n_samples, confidence)
                      < numerics.pac_bayes_gap(report.kl_iso, n_samples, confidence)):
                failures.append(f"d={d}: PAC-Bayes gap ordering does not follow the KL ordering")

        homogeneous = 100
        for _ in range(homogeneous):
            d = int(rng.integers(1, 21))
            fisher = numerics.FisherDiagonal(np.full(d, math.exp(rng.uniform(-4, 4))))
            report = numerics.kl_comparison(fisher)
            if abs(report.kl_iso - report.kl_gas) >= 1e-12:
                failures.append(f"homogeneous d={d}: |kl_iso - kl_gas| = {abs(report.kl_iso - report.kl_gas):.3e}")
        return _result("jensen_strictness", CheckKind.NUMERICS, failures, self.config.kl_trials + homogeneous,
                       min_margin=min_margin)

    def _check_static_memory_ordering(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        hand = numerics.kl_comparison(
            numerics.FisherDiagonal([2.0, 0.5]),
            numerics.ComparisonOptions(static_lambda=1.0, memory_lambda=1.0, fisher_hist=np.array([1.0, 1.0])),
        )
        if not math.isclose(hand.kl_static, 0.25, rel_tol=0.0, abs_tol=1e-12):
            failures.append(f"hand shift: kl_static = {hand.kl_static!r}, expected 0.25")
        if not hand.kl_gas < min(hand.kl_static, hand.kl_memory):
            failures.append("hand shift: GAS does not beat static and memory")

        bound = 0.1
        applicable = {"static": 0, "memory": 0}
        for trial in range(self.config.scenario_trials):
            d = int(rng.integers(2, 11))
            fisher_hist = np.exp(rng.uniform(-2, 2, size=d))
            shift = rng.uniform(0.5, 2.0)
            fisher_now = numerics.FisherDiagonal(fisher_hist * np.exp(rng.normal(scale=shift, size=d)))
            approx_error = rng.uniform(-bound, bound, size=d)
            static_lambda = float(np.mean(fisher_hist))
            report = numerics.kl_comparison(fisher_now, numerics.ComparisonOptions(
                optimal_gas_scale=True, approx_error=approx_error, static_lambda=static_lambda,
                memory_lambda=1.0, fisher_hist=fisher_hist))
            competitors = {
                "static": (report.kl_static, static_lambda),
                "memory": (report.kl_memory, fisher_hist),
            }
            for name, (kl_comp, precision) in competitors.items():
                _, scores = numerics.fisher_mismatch(fisher_now, precision)
                if not numerics.mismatch_exceeds_approx_error(scores, bound):
                    continue
                applicable[name] += 1
                if not report.kl_gas < kl_comp:
                    failures.append(f"scenario {trial} ({name}): kl_gas {report.kl_gas:.4e} >= {kl_comp:.4e}")
        return _result("static_memory_ordering", CheckKind.NUMERICS, failures, self.config.scenario_trials + 1,
                       applicable_static=applicable["static"], applicable_memory=applicable["memory"],
                       hand_kl_static=hand.kl_static)

    def _check_pac_bayes_hand_case(self, rng: np.random.Generator) -> CheckResult:
        gap = numerics.pac_bayes_gap(1.0, 100, 0.05)
        expected = math.sqrt((1.0 + math.log(2.0 * 10.0 / 0.05)) / 200.0)
        failures = [] if math.isclose(gap, expected, rel_tol=1e-12) else [f"gap {gap} != {expected}"]
        if not numerics.pac_bayes_gap(0.0, 100, 0.05) < gap:
            failures.append("gap is not increasing in KL")
        return _result("pac_bayes_hand_case", CheckKind.NUMERICS, failures, 2, gap=gap)

    # gas

    def _check_noise_scale_range(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        trials = self.config.landscapes
        for trial in range(trials):
            shape = (int(rng.integers(1, 7)), int(rng.integers(1, 9)))
            sums = rng.exponential(size=shape) * 10.0 ** rng.uniform(-9, 2)
            scales = gas.GradientBuffer.from_sums(sums).noise_scales().scales
            if np.any(scales <= 0) or np.any(scales > 1):
                failures.append(f"trial {trial}: scales outside (0, 1]")
            if scales.max() != 1.0:
                failures.append(f"trial {trial}: max scale {scales.max()!r}")
            order = np.argsort(sums, axis=None, kind="stable")
            if np.any(np.diff(scales.reshape(-1)[order]) > 1e-15):
                failures.append(f"trial {trial}: scales not monotone in accumulated gradient")

        equal = gas.GradientBuffer.from_sums(np.full((3, 4), 0.7)).noise_scales().scales
        if not np.all(equal == 1.0):
            failures.append("equal buffer does not give unit scales")
        hand = gas.GradientBuffer.from_sums(np.array([1.0, 3.0])).noise_scales().scales
        if not np.allclose(hand, [1.0, 0.6], rtol=0.0, atol=1e-6):
            failures.append(f"hand case [1, 3] gave {hand.tolist()}")
        return _result("noise_scale_range", CheckKind.GAS, failures, trials + 2, hand_case=hand.tolist())

    def _check_perturb_reproducible(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        trials = 20
        for trial in range(trials):
            shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
            weights = rng.normal(size=shape)
            scales = rng.uniform(0.01, 1.0, size=shape)
            seed = int(rng.integers(0, 2 ** 31))
            if not np.array_equal(gas.perturb(weights, scales, seed), gas.perturb(weights, scales, seed)):
                failures.append(f"trial {trial}: two runs differ")
            raw = np.random.default_rng(seed).standard_normal(shape)
            if not np.array_equal(gas.perturb(np.zeros(shape), np.full(shape, 0.5), seed) / 0.5, raw):
                failures.append(f"trial {trial}: perturbation is not scale * xi")
        return _result("perturb_reproducible", CheckKind.GAS, failures, trials)

    def _check_quadratic_increase(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        hand = [
            (gas.QuadraticLandscape([2.0, 2.0]), np.array([0.5, 0.5]), 0.5),
            (gas.QuadraticLandscape([3.0, 1.0]), np.array([1.0, 1.0]), 2.0),
        ]
        for landscape, scales, expected in hand:
            value = gas.expected_quadratic_increase(landscape, scales)
            if not math.isclose(value, expected, rel_tol=1e-12):
                failures.append(f"lambda={landscape.eigenvalues.tolist()}: {value} != {expected}")

        pairs = self.config.quadratic_pairs
        band = dynamics.corrected_band(pairs, self.config.quadratic_draws)
        worst = 0.0
        for index in range(pairs):
            landscape = gas.QuadraticLandscape.random(rng, int(rng.integers(2, 11)), 100.0)
            scales = rng.uniform(0.05, 1.0, size=landscape.dimension)
            exact = gas.expected_quadratic_increase(landscape, scales)
            mean, stderr = gas.monte_carlo_quadratic_increase(
                landscape, scales, self.config.quadratic_draws, derive_seed(self.seed, f"theory/quadratic/{index}"))
            z = abs(mean - exact) / stderr
            worst = max(worst, z)
            if z > band:
                failures.append(f"pair {index}: exact {exact:.5f} vs mc {mean:.5f} ({z:.2f} stderr)")
        return _result("quadratic_increase", CheckKind.GAS, failures, pairs + len(hand), band=band, worst_z=worst)

    def _check_adversarial_ratio(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        hand = gas.adversarial_comparison(gas.QuadraticLandscape([3.0, 1.0]), 1.0)
        for got, expected, label in ((hand.delta_adv, 1.5, "delta_adv"), (hand.delta_gas, 0.75, "delta_gas"),
                                     (hand.ratio, 2.0, "ratio")):
            if not math.isclose(got, expected, rel_tol=1e-12):
                failures.append(f"hand case {label} = {got!r}, expected {expected}")

        for trial in range(self.config.landscapes):
            landscape = gas.QuadraticLandscape.random(rng, int(rng.integers(2, 21)), 1000.0)
            rho_radius = float(rng.uniform(0.1, 3.0))
            comparison = gas.adversarial_comparison(landscape, rho_radius)
            kappa = landscape.condition_number
            if not (1.0 - 1e-12 <= comparison.ratio <= kappa * (1.0 + 1e-12)):
                failures.append(f"trial {trial}: ratio {comparison.ratio:.6f} outside [1, {kappa:.6f}]")
            budget = gas.gas_budget_scales(landscape, rho_radius)
            if not math.isclose(float(np.sum(budget ** 2)), rho_radius ** 2, rel_tol=1e-12):
                failures.append(f"trial {trial}: GAS budget does not spend rho^2")
            theta = landscape.optimum + rng.normal(size=landscape.dimension)
            sam = gas.sam_perturbation(landscape, theta, rho_radius)
            if not math.isclose(float(np.linalg.norm(sam)), rho_radius, rel_tol=1e-12):
                failures.append(f"trial {trial}: adversarial step norm differs from rho")
        return _result("adversarial_ratio", CheckKind.GAS, failures, self.config.landscapes + 1,
                       hand_case=hand.to_dict())

    # pas

    def _check_prototype_hand_cases(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        single = pas.compute_prototypes([(pas.FeatureMap(np.array([[[3.0]], [[4.0]]])), np.array([[1]]))])
        if not np.allclose(single.prototypes[1], [0.6, 0.8], rtol=0, atol=1e-15):
            failures.append(f"(3, 4) gave {single.prototypes[1].tolist()}")
        averaged = pas.compute_prototypes([
            (pas.FeatureMap(np.array([[[1.0]], [[0.0]]])), np.array([[2]])),
            (pas.FeatureMap(np.array([[[0.0]], [[1.0]]])), np.array([[2]])),
        ])
        if not np.allclose(averaged.prototypes[2], [0.5, 0.5], rtol=0, atol=1e-15):
            failures.append(f"averaged case gave {averaged.prototypes[2].tolist()}")

        trials = 20
        for trial in range(trials):
            samples = [(pas.FeatureMap(rng.normal(size=(4, 3, 3))), rng.integers(0, 3, size=(3, 3)))
                       for _ in range(4)]
            base = pas.compute_prototypes(samples)
            rescaled = pas.compute_prototypes(
                [(pas.FeatureMap(fm.features * rng.uniform(0.1, 10.0)), labels) for fm, labels in samples[::-1]])
            for class_id in base.classes:
                if not np.allclose(base.prototypes[class_id], rescaled.prototypes[class_id], rtol=1e-12, atol=1e-12):
                    failures.append(f"trial {trial}: class {class_id} changes under reorder/rescale")
        return _result("prototype_hand_cases", CheckKind.PAS, failures, trials + 2)

    @staticmethod
    def _random_bank(rng: np.random.Generator, classes: int, dim: int) -> pas.PrototypeBank:
        vectors = rng.normal(size=(classes, dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        return pas.PrototypeBank({c: vectors[c] for c in range(classes)}, {c: 1 for c in range(classes)})

    def _check_validation_invariance(self, rng: np.random.Generator) -> CheckResult:
        pixels, classes, dim = self.config.pixel_trials, 4, 8
        bank = self._random_bank(rng, classes, dim)
        logits = rng.normal(scale=2.0, size=(classes, 1, pixels))
        features = rng.normal(size=(dim, 1, pixels))
        base = pas.validate_pixels(logits, pas.FeatureMap(features), bank)
        scaled = pas.validate_pixels(logits, pas.FeatureMap(features * rng.uniform(0.5, 3.0, size=(1, 1, pixels))),
                                     bank)
        shifted = pas.validate_pixels(logits + rng.uniform(-5.0, 5.0, size=(1, 1, pixels)),
                                      pas.FeatureMap(features), bank)
        failures = []
        if not np.array_equal(base.mask, scaled.mask):
            failures.append(f"{int(np.sum(base.mask != scaled.mask))} pixels change under feature rescaling")
        if not np.array_equal(base.mask, shifted.mask):
            failures.append(f"{int(np.sum(base.mask != shifted.mask))} pixels change under logit shift")
        return _result("validation_invariance", CheckKind.PAS, failures, pixels, accepted=base.accepted_count)

    def _check_threshold_monotonicity(self, rng: np.random.Generator) -> CheckResult:
        pixels, classes, dim = self.config.pixel_trials, 3, 8
        bank = self._random_bank(rng, classes, dim)
        logits = rng.normal(scale=2.0, size=(classes, 1, pixels))
        features = pas.FeatureMap(rng.normal(size=(dim, 1, pixels)))
        failures = []
        grid = np.linspace(0.0, 1.0, 11)
        for fixed in (0.0, 0.5):
            conf_counts = [pas.validate_pixels(logits, features, bank, pas.FilterConfig(tau_conf=t, tau_sim=fixed))
                           .accepted_count for t in grid]
            sim_counts = [pas.validate_pixels(logits, features, bank, pas.FilterConfig(tau_conf=fixed, tau_sim=t))
                          .accepted_count for t in grid]
            for label, counts in (("tau_conf", conf_counts), ("tau_sim", sim_counts)):
                if any(b > a for a, b in zip(counts, counts[1:])):
                    failures.append(f"{label} sweep at other={fixed}: counts {counts}")
        return _result("threshold_monotonicity", CheckKind.PAS, failures, 4 * len(grid))

    def _check_consistency_cases(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        probs = rng.dirichlet(np.ones(3), size=(4, 5)).transpose(2, 0, 1)
        other = rng.dirichlet(np.ones(3), size=(4, 5)).transpose(2, 0, 1)
        full = pas.ValidityMask(np.ones((4, 5), dtype=bool))
        empty = pas.ValidityMask(np.zeros((4, 5), dtype=bool))
        if pas.consistency_loss(probs, probs, full, full) != 0.0:
            failures.append("identical tensors give nonzero loss")
        if pas.consistency_loss(probs, other, empty, full) != 0.0:
            failures.append("empty joint mask gives nonzero loss")
        if pas.consistency_loss(probs, other, full, full) != pas.consistency_loss(other, probs, full, full):
            failures.append("loss is not symmetric")
        one = pas.ValidityMask(np.ones((1, 1), dtype=bool))
        hand = pas.consistency_loss(np.array([[[1.0]], [[0.0]]]), np.array([[[0.0]], [[1.0]]]), one, one)
        if hand != 2.0:
            failures.append(f"opposite one-hots gave {hand}")
        return _result("consistency_cases", CheckKind.PAS, failures, 4)

    def _check_dual_criteria_precision(self, rng: np.random.Generator) -> CheckResult:
        seeds, pixels, classes, dim = 50, 400, 3, 16
        failures = []
        gains = []
        for trial in range(seeds):
            trial_rng = named_stream(self.seed, f"theory/dual_criteria/{trial}")
            bank = self._random_bank(trial_rng, classes, dim)
            truth = trial_rng.integers(0, classes, size=(1, pixels))
            prototypes = np.stack([bank.prototypes[c] for c in range(classes)])
            features = prototypes[truth[0]].T[:, None, :] + trial_rng.normal(scale=0.12, size=(dim, 1, pixels))
            logits = 2.5 * np.eye(classes)[truth[0]].T[:, None, :] + trial_rng.normal(scale=1.5,
                                                                                     size=(classes, 1, pixels))
            predicted = np.argmax(logits, axis=0)
            feature_map = pas.FeatureMap(features)
            loose = pas.validate_pixels(logits, feature_map, bank, pas.FilterConfig(tau_conf=0.7, tau_sim=0.0))
            strict = pas.validate_pixels(logits, feature_map, bank, pas.FilterConfig(tau_conf=0.7, tau_sim=0.7))
            rho_loose = pas.estimate_coverage_precision(loose, predicted, truth).rho
            rho_strict = pas.estimate_coverage_precision(strict, predicted, truth).rho
            gains.append(rho_strict - rho_loose)
            if rho_strict < rho_loose:
                failures.append(f"seed {trial}: precision {rho_strict:.4f} < {rho_loose:.4f}")
        return _result("dual_criteria_precision", CheckKind.PAS, failures, seeds, mean_gain=float(np.mean(gains)))

    # dynamics

    def _random_params(self, rng: np.random.Generator, f_low: float = 0.0) -> dynamics.DynamicsParams:
        return dynamics.DynamicsParams(
            epsilon0=float(rng.uniform(0.01, 0.99)),
            gamma=float(rng.uniform(0.01, 0.95)),
            alpha=float(rng.uniform(0.0, 0.8)),
            f=float(rng.uniform(f_low, 1.0)),
            rho=float(rng.uniform(0.0, 1.0)),
        )

    def _check_asymptotic_limit(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        worst = 0.0
        for trial in range(self.config.dynamics_trials):
            params = self._random_params(rng)
            limit = dynamics.asymptotic_error(params)
            iterated, _ = dynamics.iterate_to_convergence(params)
            worst = max(worst, abs(iterated - limit))
            if abs(iterated - limit) > 1e-9:
                failures.append(f"trial {trial}: iterated {iterated:.12f} vs closed form {limit:.12f}")
            if not (params.lam < 1.0 and params.lam_eff <= params.lam):
                failures.append(f"trial {trial}: contraction factors {params.lam_eff} / {params.lam}")
            bounded = dynamics.trajectory(params, steps=dynamics.convergence_step_bound(params))[-1]
            if abs(bounded - limit) > 1e-9 + 1e-12:
                failures.append(f"trial {trial}: still {abs(bounded - limit):.2e} away after the step bound")
            if dynamics.asymptotic_error(params.with_values(rho=0.0)) != params.epsilon0:
                failures.append(f"trial {trial}: rho = 0 limit differs from epsilon0")
            if dynamics.asymptotic_error(params.with_values(rho=1.0)) != (1.0 - params.f * params.gamma) * params.epsilon0:
                failures.append(f"trial {trial}: rho = 1 limit differs from (1 - f gamma) epsilon0")
        return _result("asymptotic_limit", CheckKind.DYNAMICS, failures, self.config.dynamics_trials, worst=worst)

    def _check_precision_monotonicity(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        for trial in range(self.config.dynamics_trials):
            params = self._random_params(rng, f_low=0.05)
            rho = min(params.rho, 0.99)
            if not (dynamics.asymptotic_error(params.with_values(rho=rho + 0.01))
                    < dynamics.asymptotic_error(params.with_values(rho=rho))):
                failures.append(f"trial {trial}: limit does not decrease in rho at {rho:.4f}")
            # exceeding the threshold is sufficient; any positive precision already improves
            threshold = dynamics.improvement_threshold(params.f, params.gamma)
            improves = dynamics.asymptotic_error(params) < params.epsilon0
            if params.rho > max(threshold, 0.0) and not improves:
                failures.append(f"trial {trial}: rho {params.rho:.4f} above threshold {threshold:.4f} does not improve")
            if improves != (params.rho > 0.0):
                failures.append(f"trial {trial}: improves={improves} at rho {params.rho!r}")
        return _result("precision_monotonicity", CheckKind.DYNAMICS, failures, self.config.dynamics_trials)

    def _random_stats(self, rng: np.random.Generator) -> dynamics.CriteriaStats:
        a1, a2, b1, b2 = rng.uniform(0.01, 1.0, size=4)
        return dynamics.CriteriaStats(alpha1=float(a1), alpha2=float(a2), beta1=float(b1), beta2=float(b2),
                                      pi=float(rng.uniform(0.01, 0.99)))

    def _check_dual_precision_sign(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        for trial in range(self.config.stats_draws):
            stats = self._random_stats(rng)
            precision = dynamics.dual_precision(stats)
            if np.sign(precision.rho12 - precision.rho1) != np.sign(stats.alpha2 - stats.beta2):
                failures.append(f"draw {trial}: rho12 - rho1 = {precision.rho12 - precision.rho1:.3e} "
                                f"but alpha2 - beta2 = {stats.alpha2 - stats.beta2:.3e}")
            closed = dynamics.precision_gain_closed_form(stats)
            if not math.isclose(closed, precision.gain, rel_tol=1e-12):
                failures.append(f"draw {trial}: gain {precision.gain!r} vs closed form {closed!r}")
        c = self.criteria
        reference = dynamics.dual_precision(dynamics.CriteriaStats(c.alpha1, c.alpha2, c.beta1, c.beta2, c.pi))
        return _result("dual_precision_sign", CheckKind.DYNAMICS, failures, self.config.stats_draws,
                       configured=reference.to_dict())

    def _check_method_ordering(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        compared = 0
        for trial in range(self.config.dynamics_trials):
            stats = self._random_stats(rng)
            params = self._random_params(rng, f_low=0.05)
            comparison = dynamics.compare_methods(stats, params.f, params.gamma, params.epsilon0, params.alpha)
            precisions = comparison.precisions
            if abs(precisions["pas"] - precisions["confidence_only"]) < 1e-9:
                continue
            compared += 1
            pas_better = precisions["pas"] > precisions["confidence_only"]
            if pas_better != (comparison.pas < comparison.confidence_only):
                failures.append(f"trial {trial}: precision ordering does not carry to limiting error")
        return _result("method_ordering", CheckKind.DYNAMICS, failures, self.config.dynamics_trials,
                       compared=compared)

    def _check_memory_bank_monotone(self, rng: np.random.Generator) -> CheckResult:
        failures = []
        crossings = 0
        for trial in range(self.config.memory_models):
            interior = np.sort(rng.uniform(0.05, 0.95, size=int(rng.integers(0, 4))))
            xs = np.concatenate([[0.0], interior, [1.0]])
            ys = xs + rng.uniform(0.05, 1.0, size=xs.size) * (1.0 - xs)
            ys[0] = rng.uniform(0.01, 0.5)
            model = dynamics.MemoryBankModel(eta=float(rng.uniform(0.01, 1.0)),
                                             g=dynamics.piecewise_linear_response(list(zip(xs, ys))),
                                             e0=float(rng.uniform(0.0, 0.5)))
            errors = np.asarray(dynamics.memory_bank_trajectory(model, 200))
            if np.any(np.diff(errors) < -1e-12):
                failures.append(f"model {trial}: error decreases by {-np.min(np.diff(errors)):.3e}")
            if dynamics.crossover_step(model, 0.9, 200) is not None:
                crossings += 1
        return _result("memory_bank_monotone", CheckKind.DYNAMICS, failures, self.config.memory_models,
                       crossovers_at_rho_0_9=crossings)

    def _check_monte_carlo_oracle(self, rng: np.random.Generator) -> CheckResult:
        parameter_sets = [
            dynamics.DynamicsParams(epsilon0=0.3, gamma=0.8, alpha=0.9, f=0.5, rho=0.9),
            dynamics.DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=0.5, f=1.0, rho=0.0),
            dynamics.DynamicsParams(epsilon0=0.4, gamma=0.9, alpha=0.95, f=0.8, rho=0.5),
            dynamics.DynamicsParams(epsilon0=0.1, gamma=0.3, alpha=0.0, f=0.3, rho=1.0),
            dynamics.DynamicsParams(epsilon0=0.5, gamma=0.7, alpha=0.8, f=0.6, rho=0.3),
        ]
        steps = self.config.mc_steps
        band = dynamics.corrected_band(steps * len(parameter_sets), self.config.mc_replicates,
                                       self.config.mc_family_alpha)
        failures = []
        worst = 0.0
        inside = 0
        total = 0
        for index, params in enumerate(parameter_sets):
            oracle = dynamics.monte_carlo_oracle(params, self.config.mc_population, steps, self.config.mc_replicates,
                                                 derive_seed(self.seed, f"theory/monte_carlo/{index}"))
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(oracle.stderr > 0, oracle.deviations() / oracle.stderr, 0.0)
            worst = max(worst, float(np.max(z)))
            inside += int(np.sum(z <= 3.0))
            total += int(z.size)
            if not oracle.within_band(band):
                failures.append(f"set {index}: max deviation {float(np.max(z)):.2f} stderr exceeds {band:.2f}")
        fraction = inside / total if total else 1.0
        result = _result("monte_carlo_oracle", CheckKind.DYNAMICS, failures, len(parameter_sets),
                         band=band, worst_z=worst, within_3_stderr=bool(worst <= 3.0),
                         fraction_within_3_stderr=fraction)
        result.detail += f"; worst {worst:.2f} stderr, {fraction:.1%} of steps within 3 stderr"
        return result

    # metrics

    def _check_total_drop_formula(self, rng: np.random.Generator) -> CheckResult:
        cases: List[Tuple[Tuple[float, ...], float]] = [
            ((0.736, 0.460, 0.398), 45.9),
            ((0.700, 0.430, 0.325), 53.6),
            ((0.700, 0.129, 0.078), 88.9),
        ]
        failures = []
        values = []
        for scores, expected in cases:
            value = total_drop(scores)
            values.append(value)
            if abs(value - expected) > 0.05:
                failures.append(f"{scores}: {value:.3f} vs {expected}")
        return _result("total_drop_formula", CheckKind.METRICS, failures, len(cases), values=values)
