import math

import numpy as np
import pytest

from errors import DegenerateFeatureError, DomainError, ShapeError
from pas import (
    FeatureMap,
    FilterConfig,
    PrototypeBank,
    ValidityMask,
    compute_prototypes,
    consistency_loss,
    consistency_loss_gradient,
    ema_update,
    estimate_coverage_precision,
    prototype_replay_gradient,
    prototype_replay_loss,
    validate_pixels,
)


def feature_map(*vectors):
    """1 x N feature map whose pixels carry `vectors`."""
    return FeatureMap(np.array(vectors, dtype=np.float64).T[:, None, :])


def pixel_logits(*rows):
    return np.array(rows, dtype=np.float64).T[:, None, :]


class TestComputePrototypes:
    def test_single_pixel_is_normalised(self):
        bank = compute_prototypes([(feature_map((3.0, 4.0)), np.array([[2]]))])
        np.testing.assert_allclose(bank.prototypes[2], [0.6, 0.8])
        assert bank.counts[2] == 1

    def test_unit_vector_fixed_point(self):
        samples = [(feature_map((1.0, 0.0), (1.0, 0.0)), np.array([[0, 0]])) for _ in range(4)]
        bank = compute_prototypes(samples)
        np.testing.assert_allclose(bank.prototypes[0], [1.0, 0.0])
        assert bank.counts[0] == 4

    def test_average_is_not_renormalised(self):
        samples = [(feature_map((2.0, 0.0)), np.array([[1]])), (feature_map((0.0, 5.0)), np.array([[1]]))]
        bank = compute_prototypes(samples)
        np.testing.assert_allclose(bank.prototypes[1], [0.5, 0.5])
        assert np.linalg.norm(bank.prototypes[1]) < 1.0

    def test_invariant_to_pixel_order_and_scale(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(3, 4, 5))
        labels = rng.integers(0, 3, size=(4, 5))
        perm = rng.permutation(20)
        shuffled = features.reshape(3, -1)[:, perm].reshape(3, 4, 5)
        reference = compute_prototypes([(FeatureMap(features), labels)])
        shuffled_bank = compute_prototypes([(FeatureMap(shuffled), labels.reshape(-1)[perm].reshape(4, 5))])
        scaled_bank = compute_prototypes([(FeatureMap(7.5 * features), labels)])
        for class_id in reference.classes:
            np.testing.assert_allclose(shuffled_bank.prototypes[class_id], reference.prototypes[class_id])
            np.testing.assert_allclose(scaled_bank.prototypes[class_id], reference.prototypes[class_id])

    def test_degenerate_class_mean(self):
        samples = [(feature_map((1.0, 0.0)), np.array([[0]])),
                   (feature_map((1.0, 1.0), (-1.0, -1.0)), np.array([[3, 3]]))]
        with pytest.raises(DegenerateFeatureError) as info:
            compute_prototypes(samples)
        assert info.value.sample_index == 1
        assert info.value.class_id == 3

    def test_label_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compute_prototypes([(feature_map((1.0, 0.0)), np.array([[0, 1]]))])

    def test_bank_merge_and_round_trip(self):
        old = PrototypeBank({0: np.array([1.0, 0.0])}, {0: 2})
        new = PrototypeBank({1: np.array([0.0, 1.0])}, {1: 3})
        merged = old.merge(new)
        assert merged.classes == [0, 1]
        assert len(old) == 1
        restored = PrototypeBank.from_dict(merged.to_dict())
        assert restored.counts == {0: 2, 1: 3}
        np.testing.assert_array_equal(restored.prototypes[1], [0.0, 1.0])


class TestValidatePixels:
    bank = PrototypeBank({0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}, {0: 1, 1: 1})

    def test_confident_and_similar_is_valid(self):
        mask = validate_pixels(pixel_logits((2.0, 0.0)), feature_map((1.0, 0.0)), self.bank)
        assert mask.mask.tolist() == [[True]]

    def test_low_confidence_rejected(self):
        mask = validate_pixels(pixel_logits((0.1, 0.0)), feature_map((1.0, 0.0)), self.bank)
        assert mask.accepted_count == 0

    def test_antipodal_feature_rejected(self):
        mask = validate_pixels(pixel_logits((2.0, 0.0)), feature_map((-1.0, 0.0)), self.bank)
        assert mask.accepted_count == 0

    def test_zero_feature_and_missing_prototype_rejected(self):
        partial = PrototypeBank({0: np.array([1.0, 0.0])}, {0: 1})
        mask = validate_pixels(pixel_logits((5.0, 0.0), (0.0, 5.0), (5.0, 0.0)),
                               feature_map((0.0, 0.0), (0.0, 1.0), (2.0, 0.1)), partial)
        assert mask.mask.tolist() == [[False, False, True]]

    def test_mask_is_conjunction_of_criteria(self):
        rng = np.random.default_rng(6)
        config = FilterConfig(tau_conf=0.6, tau_sim=0.5)
        logits = rng.normal(scale=2.0, size=(2, 8, 8))
        features = FeatureMap(rng.normal(size=(2, 8, 8)))
        mask = validate_pixels(logits, features, self.bank, config).mask
        probs = np.exp(logits) / np.exp(logits).sum(axis=0)
        predicted = probs.argmax(axis=0)
        for i in range(8):
            for j in range(8):
                vector = features.features[:, i, j]
                prototype = self.bank.prototypes[int(predicted[i, j])]
                sim = vector @ prototype / np.linalg.norm(vector)
                assert mask[i, j] == (probs[:, i, j].max() > 0.6 and sim > 0.5)

    def test_raising_thresholds_shrinks_mask(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(scale=2.0, size=(2, 10, 10))
        features = FeatureMap(rng.normal(size=(2, 10, 10)))
        loose = validate_pixels(logits, features, self.bank, FilterConfig(tau_conf=0.5, tau_sim=0.0)).mask
        tight = validate_pixels(logits, features, self.bank, FilterConfig(tau_conf=0.8, tau_sim=0.6)).mask
        assert not np.any(tight & ~loose)

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            validate_pixels(np.zeros((1, 1, 1)), feature_map((1.0, 0.0)), self.bank)
        with pytest.raises(ShapeError):
            validate_pixels(np.zeros((2, 1, 2)), feature_map((1.0, 0.0)), self.bank)

    def test_config_is_strict(self):
        with pytest.raises(ValueError):
            FilterConfig(tau_conf=1.5)
        with pytest.raises(ValueError):
            FilterConfig(tau=0.5)


class TestConsistencyLoss:
    def test_identical_tensors(self):
        probs = np.full((2, 2, 2), 0.5)
        mask = ValidityMask(np.ones((2, 2)))
        assert consistency_loss(probs, probs, mask, mask) == 0.0

    def test_empty_joint_mask(self):
        student = np.zeros((2, 1, 2))
        teacher = np.ones((2, 1, 2))
        loss, grad = consistency_loss_gradient(student, teacher, ValidityMask([[True, False]]),
                                               ValidityMask([[False, True]]))
        assert loss == 0.0
        assert not np.any(grad)

    def test_single_pixel_hand_case(self):
        student = pixel_logits((1.0, 0.0))
        teacher = pixel_logits((0.0, 1.0))
        mask = ValidityMask([[True]])
        assert consistency_loss(student, teacher, mask, mask) == pytest.approx(2.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        student = rng.uniform(size=(3, 2, 3))
        teacher = rng.uniform(size=(3, 2, 3))
        mask_s = ValidityMask(rng.uniform(size=(2, 3)) > 0.3)
        mask_t = ValidityMask(rng.uniform(size=(2, 3)) > 0.3)
        _, grad = consistency_loss_gradient(student, teacher, mask_s, mask_t)
        h = 1e-6
        for index in np.ndindex(student.shape):
            bumped = student.copy()
            bumped[index] += h
            numeric = (consistency_loss(bumped, teacher, mask_s, mask_t)
                       - consistency_loss(student, teacher, mask_s, mask_t)) / h
            assert numeric == pytest.approx(grad[index], abs=1e-4)

    def test_mask_shape_mismatch(self):
        probs = np.zeros((2, 2, 2))
        with pytest.raises(ShapeError):
            consistency_loss(probs, probs, ValidityMask(np.ones((2, 3))), ValidityMask(np.ones((2, 3))))


class TestEmaUpdate:
    def test_zero_decay_returns_student(self):
        student = np.array([0.3, -1.2])
        np.testing.assert_array_equal(ema_update(np.array([5.0, 5.0]), student, 0.0), student)

    def test_fixed_point(self):
        params = np.array([1.5, 2.5])
        np.testing.assert_array_equal(ema_update(params, params.copy(), 0.99), params)

    def test_hand_case(self):
        assert ema_update(np.array([1.0]), np.array([0.0]), 0.9)[0] == pytest.approx(0.9)

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 0.9, 0.99])
    def test_geometric_convergence_to_fixed_student(self, alpha):
        student = np.array([0.4, -2.0, 3.0])
        teacher = np.array([1.0, 1.0, -1.0])
        gap = np.abs(teacher - student)
        for k in range(1, 60):
            teacher = ema_update(teacher, student, alpha)
            np.testing.assert_allclose(np.abs(teacher - student), alpha ** k * gap, rtol=1e-9, atol=1e-15)

    def test_rejects_unit_decay(self):
        with pytest.raises(DomainError):
            ema_update(np.zeros(1), np.zeros(1), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ema_update(np.zeros(2), np.zeros(3), 0.5)


class TestCoveragePrecision:
    def test_all_correct(self):
        grid = np.array([[0, 1], [1, 0]])
        estimate = estimate_coverage_precision(ValidityMask(np.ones((2, 2))), grid, grid)
        assert (estimate.f, estimate.rho) == (1.0, 1.0)

    def test_hand_count(self):
        mask = ValidityMask([[True, True], [False, False]])
        estimate = estimate_coverage_precision(mask, np.array([[0, 1], [1, 1]]), np.array([[0, 0], [1, 1]]))
        assert (estimate.f, estimate.rho) == (0.5, 0.5)

    def test_none_accepted_is_vacuous(self):
        estimate = estimate_coverage_precision(ValidityMask(np.zeros((2, 2))), np.zeros((2, 2)), np.zeros((2, 2)))
        assert estimate.f == 0.0
        assert estimate.vacuous


class TestPrototypeReplay:
    def test_saturated_classifier(self):
        bank = PrototypeBank({0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}, {0: 1, 1: 1})
        weights = np.array([[20.0, 0.0], [0.0, 20.0]])
        assert prototype_replay_loss(bank, weights) <= 1e-6

    def test_zero_weights_give_log_classes(self):
        bank = PrototypeBank({c: np.ones(4) for c in range(3)}, {c: 1 for c in range(3)})
        assert prototype_replay_loss(bank, np.zeros((3, 4))) == pytest.approx(math.log(3.0))

    def test_single_class_hand_case(self):
        bank = PrototypeBank({0: np.array([1.0, 0.0])}, {0: 1})
        weights = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert prototype_replay_loss(bank, weights) == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        bank = PrototypeBank({0: rng.normal(size=3), 2: rng.normal(size=3)}, {0: 1, 2: 1})
        weights = rng.normal(size=(4, 3))
        _, grad = prototype_replay_gradient(bank, weights)
        h = 1e-6
        for index in np.ndindex(weights.shape):
            bumped = weights.copy()
            bumped[index] += h
            numeric = (prototype_replay_loss(bank, bumped) - prototype_replay_loss(bank, weights)) / h
            assert numeric == pytest.approx(grad[index], abs=1e-4)

    def test_class_out_of_range(self):
        bank = PrototypeBank({5: np.ones(2)}, {5: 1})
        with pytest.raises(DomainError):
            prototype_replay_loss(bank, np.zeros((3, 2)))

    def test_empty_bank(self):
        with pytest.raises(DomainError):
            prototype_replay_loss(PrototypeBank(), np.zeros((2, 2)))
