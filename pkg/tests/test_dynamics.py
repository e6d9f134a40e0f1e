import numpy as np
import pytest

from dynamics import (
    CriteriaStats,
    DynamicsParams,
    MemoryBankModel,
    Mode,
    asymptotic_error,
    compare_methods,
    convergence_step_bound,
    corrected_band,
    coverage_precision_heatmap,
    crossover_step,
    dual_precision,
    improvement_threshold,
    iterate_to_convergence,
    memory_bank_trajectory,
    monte_carlo_oracle,
    piecewise_linear_response,
    precision_gain_closed_form,
    precision_sweep,
    step,
    trajectory,
)
from errors import DomainError


class TestStep:
    def test_unfiltered_fixed_point(self):
        params = DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=0.9)
        assert step(0.2, params, Mode.UNFILTERED) == pytest.approx(0.2, abs=1e-15)

    def test_unfiltered_hand_case(self):
        params = DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=0.9)
        assert step(0.4, params, Mode.UNFILTERED) == pytest.approx(0.39, abs=1e-15)

    def test_zero_coverage_is_supervised(self):
        params = DynamicsParams(epsilon0=0.3, gamma=0.7, alpha=0.8, f=0.0, rho=0.4)
        assert step(0.5, params) == pytest.approx(0.8 * 0.5 + 0.2 * 0.3, abs=1e-15)

    def test_out_of_range_inputs(self):
        params = DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=0.9)
        with pytest.raises(DomainError):
            step(1.5, params)
        with pytest.raises(DomainError):
            DynamicsParams(epsilon0=0.0, gamma=0.5, alpha=0.9)
        with pytest.raises(DomainError):
            DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=1.0)


class TestAsymptoticError:
    def test_unfiltered_is_epsilon0(self):
        assert asymptotic_error(DynamicsParams(epsilon0=0.25, gamma=0.6, alpha=0.5), Mode.UNFILTERED) == 0.25

    def test_precision_endpoints(self):
        params = DynamicsParams(epsilon0=0.3, gamma=0.8, alpha=0.9, f=0.5)
        assert asymptotic_error(params.with_values(rho=0.0)) == 0.3
        assert asymptotic_error(params.with_values(rho=1.0)) == pytest.approx(0.6 * 0.3, abs=1e-15)

    def test_hand_case_agrees_with_iteration(self):
        params = DynamicsParams(epsilon0=0.3, gamma=0.8, alpha=0.9, f=0.5, rho=0.9)
        assert asymptotic_error(params) == pytest.approx(0.1875, abs=1e-12)
        limit, _ = iterate_to_convergence(params)
        assert limit == pytest.approx(0.1875, abs=1e-9)
        assert trajectory(params, steps=10_000)[-1] == pytest.approx(0.1875, abs=1e-9)

    def test_strictly_decreasing_in_precision(self):
        params = DynamicsParams(epsilon0=0.4, gamma=0.3, alpha=0.7, f=0.8)
        limits = [asymptotic_error(params.with_values(rho=r)) for r in np.linspace(0, 1, 21)]
        assert all(a > b for a, b in zip(limits, limits[1:]))

    def test_iteration_converges_within_step_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            params = DynamicsParams(epsilon0=float(rng.uniform(0.05, 0.5)), gamma=float(rng.uniform(0.01, 0.95)),
                                    alpha=float(rng.uniform(0.0, 0.8)), f=float(rng.uniform(0, 1)),
                                    rho=float(rng.uniform(0, 1)))
            values = trajectory(params, steps=convergence_step_bound(params) + 50)
            assert values[-1] == pytest.approx(asymptotic_error(params), abs=1e-8)


class TestImprovementThreshold:
    @pytest.mark.parametrize("f, gamma, expected", [(1.0, 0.5, 0.0), (0.5, 0.8, -0.5), (1.0, 0.8, 0.75)])
    def test_hand_values(self, f, gamma, expected):
        assert improvement_threshold(f, gamma) == pytest.approx(expected, abs=1e-15)

    def test_zero_coverage(self):
        with pytest.raises(DomainError):
            improvement_threshold(0.0, 0.5)

    def test_precision_above_threshold_improves(self):
        params = DynamicsParams(epsilon0=0.3, gamma=0.8, alpha=0.9, f=1.0)
        rows = precision_sweep(params, [0.0, 0.5, 0.76, 0.9, 1.0])
        assert rows[0]["improves"] is False
        assert all(row["improves"] for row in rows[1:])
        assert all(row["threshold"] == pytest.approx(0.75) for row in rows)

    def test_sweep_without_coverage_has_no_threshold(self):
        rows = precision_sweep(DynamicsParams(epsilon0=0.3, gamma=0.8, alpha=0.9, f=0.0), [0.5])
        assert rows[0]["threshold"] is None
        assert rows[0]["asymptotic_error"] == pytest.approx(0.3)

    def test_heatmap_covers_grid(self):
        params = DynamicsParams(epsilon0=0.3, gamma=0.5, alpha=0.9)
        cells = coverage_precision_heatmap(params, [0.0, 0.5, 1.0], [0.0, 1.0])
        assert len(cells) == 6
        assert cells[-1] == {"f": 1.0, "rho": 1.0, "asymptotic_error": pytest.approx(0.15)}


class TestDualPrecision:
    def test_uninformative_second_criterion(self):
        stats = CriteriaStats(alpha1=0.8, alpha2=0.4, beta1=0.3, beta2=0.4, pi=0.6)
        result = dual_precision(stats)
        assert result.rho12 == pytest.approx(result.rho1, abs=1e-15)

    def test_hand_case(self):
        result = dual_precision(CriteriaStats(alpha1=0.9, alpha2=0.9, beta1=0.1, beta2=0.1, pi=0.5))
        assert result.rho1 == pytest.approx(0.9)
        assert result.rho12 == pytest.approx(0.81 / 0.82)

    def test_sign_follows_second_criterion(self):
        rng = np.random.default_rng(10)
        for _ in range(10_000):
            a1, a2, b1, b2 = rng.uniform(0.01, 1.0, size=4)
            stats = CriteriaStats(alpha1=a1, alpha2=a2, beta1=b1, beta2=b2, pi=float(rng.uniform(0.01, 0.99)))
            result = dual_precision(stats)
            assert np.sign(round(result.rho12 - result.rho1, 14)) == np.sign(round(a2 - b2, 14))
            assert result.gain == pytest.approx(precision_gain_closed_form(stats), rel=1e-9)

    def test_method_ordering(self):
        stats = CriteriaStats(alpha1=0.9, alpha2=0.85, beta1=0.2, beta2=0.15, pi=0.7)
        comparison = compare_methods(stats, f=0.6, gamma=0.5, epsilon0=0.3)
        assert comparison.pas < comparison.confidence_only < comparison.no_filter
        assert comparison.consistency_based < comparison.no_filter
        assert comparison.to_dict()["precisions"]["pas"] > comparison.to_dict()["precisions"]["confidence_only"]


class TestMemoryBank:
    def test_identity_response_is_constant(self):
        model = MemoryBankModel(0.5, lambda e: e, e0=0.2, require_positive_base=False)
        assert memory_bank_trajectory(model, 5) == pytest.approx([0.2] * 6)

    def test_hand_recurrence(self):
        model = MemoryBankModel(0.5, lambda e: min(1.0, e + 0.1), e0=0.0)
        assert memory_bank_trajectory(model, 3) == pytest.approx([0.0, 0.05, 0.1, 0.15])

    def test_inadmissible_response(self):
        with pytest.raises(DomainError):
            MemoryBankModel(0.5, lambda e: 0.5 * e + 0.01)
        with pytest.raises(DomainError):
            MemoryBankModel(0.5, lambda e: e)

    def test_random_piecewise_models_are_monotone(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            xs = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, size=3)), [1.0]])
            ys = xs + rng.uniform(0.05, 1.0, size=xs.size) * (1.0 - xs)
            ys[0] = rng.uniform(0.01, 0.5)
            g = piecewise_linear_response(list(zip(xs, ys)))
            model = MemoryBankModel(float(rng.uniform(0.05, 1.0)), g, e0=float(rng.uniform(0, 0.5)))
            values = memory_bank_trajectory(model, 50)
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_crossover(self):
        model = MemoryBankModel(0.5, lambda e: min(1.0, e + 0.1), e0=0.0)
        assert crossover_step(model, rho_pas=0.92, horizon=10) == 2
        assert crossover_step(model, rho_pas=0.5, horizon=3) is None

    def test_knots_must_span_unit_interval(self):
        with pytest.raises(DomainError):
            piecewise_linear_response([(0.1, 0.2), (1.0, 1.0)])


class TestMonteCarloOracle:
    def test_band_is_wider_than_plain_normal(self):
        assert corrected_band(100, 20, 0.01) > 3.0

    def test_simulation_tracks_recurrence(self):
        params = DynamicsParams(epsilon0=0.3, gamma=0.5, alpha=0.9, f=0.6, rho=0.8)
        result = monte_carlo_oracle(params, population=100_000, steps=60, replicates=20, seed=1)
        assert result.within_band(corrected_band(60, 20, 0.01))
        assert result.mean[-1] == pytest.approx(asymptotic_error(params), abs=5e-3)
        assert len(result.rows()) == 61

    def test_reproducible(self):
        params = DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=0.5, f=0.5, rho=0.5)
        a = monte_carlo_oracle(params, 1000, 5, 3, seed=7)
        b = monte_carlo_oracle(params, 1000, 5, 3, seed=7)
        np.testing.assert_array_equal(a.mean, b.mean)

    def test_small_population(self):
        with pytest.raises(DomainError):
            monte_carlo_oracle(DynamicsParams(epsilon0=0.2, gamma=0.5, alpha=0.5), 10, 5, 3, seed=0)
