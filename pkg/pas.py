"""Prototype-anchored supervision (PAS).

Class prototypes from labeled features, dual-criteria pixel validation
(confidence and prototype similarity), the consistency loss over pixels
validated by both student and teacher, EMA teacher updates and prototype
replay at the classifier.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import DegenerateFeatureError, DomainError, ShapeError, require_same_shape
from tensor_ops import cosine_similarity, log_softmax, softmax

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class FeatureMap:
    features: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 3 or min(features.shape) < 1:
            raise ShapeError(f"feature map must be D x H x W, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise DomainError("feature map contains non-finite entries")
        self.features = features

    @property
    def dimension(self) -> int:
        return self.features.shape[0]

    @property
    def spatial_shape(self) -> Tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]


@dataclass(eq=False)
class PrototypeBank:
    prototypes: Dict[int, np.ndarray] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.prototypes) != set(self.counts):
            raise DomainError("prototype and count maps must cover the same classes")
        for class_id, vector in self.prototypes.items():
            if self.counts[class_id] < 1:
                raise DomainError(f"class {class_id} has no contributing samples")
            if not np.all(np.isfinite(vector)):
                raise DomainError(f"prototype for class {class_id} is not finite")

    def __len__(self) -> int:
        return len(self.prototypes)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.prototypes

    @property
    def classes(self) -> List[int]:
        return sorted(self.prototypes)

    def merge(self, other: "PrototypeBank") -> "PrototypeBank":
        """New bank with `other`'s classes added; classes present in both take `other`'s entry."""
        prototypes = dict(self.prototypes)
        counts = dict(self.counts)
        prototypes.update(other.prototypes)
        counts.update(other.counts)
        return PrototypeBank(prototypes, counts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            str(class_id): {"vector": self.prototypes[class_id].tolist(), "count": self.counts[class_id]}
            for class_id in self.classes
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PrototypeBank":
        prototypes = {int(k): np.asarray(v["vector"], dtype=np.float64) for k, v in data.items()}
        counts = {int(k): int(v["count"]) for k, v in data.items()}
        return cls(prototypes, counts)


class FilterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tau_conf: float = Field(default=0.7, ge=0.0, le=1.0)
    tau_sim: float = Field(default=0.7, ge=-1.0, le=1.0)


@dataclass(eq=False)
class ValidityMask:
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def accepted_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mask.shape

    def intersect(self, other: "ValidityMask") -> "ValidityMask":
        require_same_shape(self.mask, other.mask, "validity mask")
        return ValidityMask(self.mask & other.mask)


def compute_prototypes(samples: Iterable[Tuple[FeatureMap, np.ndarray]]) -> PrototypeBank:
    """Average of per-sample, l2-normalized class-mean features.

    The average itself is not re-normalized.
    """
    sums: Dict[int, np.ndarray] = {}
    counts: Dict[int, int] = {}
    for index, (feature_map, labels) in enumerate(samples):
        labels = np.asarray(labels)
        if labels.shape != feature_map.spatial_shape:
            raise ShapeError(f"sample {index}: labels {labels.shape} do not align with features "
                             f"{feature_map.spatial_shape}")
        if np.any(labels < 0):
            raise DomainError(f"sample {index}: class ids must be nonnegative")
        flat = feature_map.features.reshape(feature_map.dimension, -1)
        flat_labels = labels.reshape(-1)
        for class_id in np.unique(flat_labels):
            class_id = int(class_id)
            sample_mean = flat[:, flat_labels == class_id].mean(axis=1)
            norm = np.linalg.norm(sample_mean)
            if norm == 0:
                raise DegenerateFeatureError(
                    f"sample {index}: class {class_id} mean feature has zero norm",
                    sample_index=index, class_id=class_id)
            sums[class_id] = sums.get(class_id, 0.0) + sample_mean / norm
            counts[class_id] = counts.get(class_id, 0) + 1
    prototypes = {c: sums[c] / counts[c] for c in sums}
    return PrototypeBank(prototypes, counts)


def validate_pixels(logits: np.ndarray, features: FeatureMap, bank: PrototypeBank,
                    config: Optional[FilterConfig] = None) -> ValidityMask:
    config = config or FilterConfig()
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[0] < 2:
        raise ShapeError(f"logits must be C x H x W with C >= 2, got {logits.shape}")
    if logits.shape[1:] != features.spatial_shape:
        raise ShapeError(f"logits {logits.shape[1:]} do not align with features {features.spatial_shape}")

    probs = softmax(logits, axis=0)
    predicted = np.argmax(probs, axis=0)
    confidence = np.max(probs, axis=0)

    similarity = np.full(predicted.shape, np.nan)
    pixel_features = np.moveaxis(features.features, 0, -1)
    for class_id in np.unique(predicted):
        class_id = int(class_id)
        if class_id not in bank:
            continue
        where = predicted == class_id
        similarity[where] = cosine_similarity(pixel_features[where], bank.prototypes[class_id])

    # NaN similarity (zero-norm feature or missing prototype) compares False
    with np.errstate(invalid="ignore"):
        valid = (confidence > config.tau_conf) & (similarity > config.tau_sim)
    return ValidityMask(valid)


def consistency_loss(probs_student: np.ndarray, probs_teacher: np.ndarray,
                     mask_student: ValidityMask, mask_teacher: ValidityMask) -> float:
    loss, _ = consistency_loss_gradient(probs_student, probs_teacher, mask_student, mask_teacher)
    return loss


def consistency_loss_gradient(probs_student: np.ndarray, probs_teacher: np.ndarray,
                              mask_student: ValidityMask,
                              mask_teacher: ValidityMask) -> Tuple[float, np.ndarray]:
    """Mean squared l2 distance over jointly valid pixels and its gradient w.r.t. the student probabilities."""
    probs_student = np.asarray(probs_student, dtype=np.float64)
    probs_teacher = np.asarray(probs_teacher, dtype=np.float64)
    require_same_shape(probs_student, probs_teacher, "probability tensor")
    joint = mask_student.intersect(mask_teacher)
    if joint.shape != probs_student.shape[1:]:
        raise ShapeError(f"mask {joint.shape} does not match probabilities {probs_student.shape[1:]}")

    grad = np.zeros_like(probs_student)
    accepted = joint.accepted_count
    if accepted == 0:
        return 0.0, grad
    diff = (probs_student - probs_teacher) * joint.mask
    loss = float(np.sum(diff ** 2) / accepted)
    grad = 2.0 * diff / accepted
    return loss, grad


def ema_update(teacher_params: np.ndarray, student_params: np.ndarray, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"EMA decay must lie in [0, 1), got {alpha}")
    teacher_params = np.asarray(teacher_params, dtype=np.float64)
    student_params = np.asarray(student_params, dtype=np.float64)
    require_same_shape(teacher_params, student_params, "EMA parameter")
    return alpha * teacher_params + (1.0 - alpha) * student_params


@dataclass
class CoveragePrecision:
    f: float
    rho: float
    accepted: int
    total: int
    vacuous: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"f": self.f, "rho": self.rho, "accepted": self.accepted,
                "total": self.total, "vacuous": self.vacuous}


def estimate_coverage_precision(mask: ValidityMask, predicted: np.ndarray, truth: np.ndarray) -> CoveragePrecision:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    require_same_shape(predicted, truth, "class grid")
    if mask.shape != predicted.shape:
        raise ShapeError(f"mask {mask.shape} does not match class grid {predicted.shape}")
    total = int(mask.mask.size)
    accepted = mask.accepted_count
    if accepted == 0:
        return CoveragePrecision(f=0.0, rho=1.0, accepted=0, total=total, vacuous=True)
    correct = int(np.count_nonzero(mask.mask & (predicted == truth)))
    return CoveragePrecision(f=accepted / total, rho=correct / accepted, accepted=accepted, total=total)


def prototype_replay_loss(bank: PrototypeBank, classifier_weights: np.ndarray) -> float:
    loss, _ = prototype_replay_gradient(bank, classifier_weights)
    return loss


def prototype_replay_gradient(bank: PrototypeBank, classifier_weights: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(W P_c) against class c, and its gradient w.r.t. W."""
    weights = np.asarray(classifier_weights, dtype=np.float64)
    if len(bank) == 0:
        raise DomainError("prototype replay needs a nonempty bank")
    num_classes = weights.shape[0]
    classes = bank.classes
    if classes[0] < 0 or classes[-1] >= num_classes:
        raise DomainError(f"bank classes {classes} fall outside the {num_classes} classifier outputs")

    prototypes = np.stack([bank.prototypes[c] for c in classes], axis=1)
    if prototypes.shape[0] != weights.shape[1]:
        raise ShapeError(f"prototype dimension {prototypes.shape[0]} does not match classifier {weights.shape}")
    logits = weights @ prototypes
    targets = np.array(classes)
    columns = np.arange(len(classes))
    loss = float(-np.mean(log_softmax(logits, axis=0)[targets, columns]))

    grad_logits = softmax(logits, axis=0)
    grad_logits[targets, columns] -= 1.0
    grad_logits /= len(classes)
    return loss, grad_logits @ prototypes.T
