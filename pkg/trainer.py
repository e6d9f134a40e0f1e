"""Session training for the pixel classifier.

Mini-batch gradient descent on per-pixel cross-entropy, optionally with
GAS perturbation of the classifier weights, the PAS consistency loss
against an EMA teacher on unlabeled images, and prototype replay of
earlier sessions' prototypes.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from bench_data import BACKGROUND, SessionData
from errors import DomainError, ShapeError, TrainingDivergenceError
from gas import GradientBuffer, perturb
from pas import (
    FeatureMap,
    FilterConfig,
    compute_prototypes,
    consistency_loss_gradient,
    ema_update,
    estimate_coverage_precision,
    prototype_replay_gradient,
    validate_pixels,
)
from pixel_model import PixelClassifierModel
from seeding import named_stream
from tensor_ops import log_softmax, softmax, softmax_backward

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(default=0.5, gt=0)
    epochs: int = Field(default=20, ge=0)
    batch_size: int = Field(default=4, ge=1)
    lambda_cons: float = Field(default=1.0, ge=0)
    lambda_proto: float = Field(default=0.1, ge=0)
    gas: bool = False
    pas: bool = False
    replay: bool = False
    use_unlabeled: bool = True
    init_new_classes: bool = True
    ema_alpha: float = Field(default=0.99, ge=0, lt=1)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    noise_std: float = Field(default=1.0, gt=0)
    epsilon: float = Field(default=1e-8, gt=0)


CONFIG_PRESETS: Dict[str, Dict[str, bool]] = {
    "vanilla": {"gas": False, "pas": False, "replay": False, "use_unlabeled": False},
    "gas-only": {"gas": True, "pas": False, "replay": False, "use_unlabeled": False},
    "pas-only": {"gas": False, "pas": True, "replay": True, "use_unlabeled": True},
    "jascl": {"gas": True, "pas": True, "replay": True, "use_unlabeled": True},
    "jascl-no-unlabeled": {"gas": True, "pas": True, "replay": True, "use_unlabeled": False},
}


def preset_config(name: str, base: Optional[TrainConfig] = None, **overrides) -> TrainConfig:
    if name not in CONFIG_PRESETS:
        raise DomainError(f"unknown configuration {name!r}; choose from {sorted(CONFIG_PRESETS)}")
    base = base or TrainConfig()
    return base.model_copy(update={**CONFIG_PRESETS[name], **overrides})


@dataclass
class EpochStats:
    epoch: int
    ce_loss: float
    consistency_loss: float
    proto_loss: float
    total_loss: float
    accepted_pct: Optional[float] = None
    measured_f: Optional[float] = None
    measured_rho: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "ce_loss": self.ce_loss,
            "consistency_loss": self.consistency_loss,
            "proto_loss": self.proto_loss,
            "total_loss": self.total_loss,
            "accepted_pct": self.accepted_pct,
            "measured_f": self.measured_f,
            "measured_rho": self.measured_rho,
        }


@dataclass
class TrainingLog:
    session_index: int
    featurizer_fingerprint: str
    epochs: List[EpochStats] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.step_losses)

    def final_coverage_precision(self) -> Optional[Tuple[float, float]]:
        """(f, rho) of the last epoch that accepted at least one pixel."""
        for stats in reversed(self.epochs):
            if stats.measured_f is not None and stats.measured_rho is not None:
                return stats.measured_f, stats.measured_rho
        return None

    def rows(self) -> List[Dict[str, Any]]:
        return [{"session": self.session_index, **stats.to_dict()} for stats in self.epochs]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "session_index": self.session_index,
            "featurizer_fingerprint": self.featurizer_fingerprint,
            "epochs": [e.to_dict() for e in self.epochs],
            "steps": self.steps,
        }


def pixel_columns(features: np.ndarray) -> np.ndarray:
    """N x D x H x W -> D x (N*H*W)."""
    return np.moveaxis(features, 1, 0).reshape(features.shape[1], -1)


def cross_entropy_gradient(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean per-pixel cross-entropy for C x P logits and its gradient w.r.t. the logits."""
    columns = np.arange(labels.size)
    loss = float(-np.mean(log_softmax(logits, axis=0)[labels, columns]))
    grad = softmax(logits, axis=0)
    grad[labels, columns] -= 1.0
    return loss, grad / labels.size


def _as_map(columns: np.ndarray) -> np.ndarray:
    return columns.reshape(columns.shape[0], 1, -1)


def init_new_classes(model: PixelClassifierModel, class_ids) -> List[int]:
    """Start classes the model has not seen from the background row, in place.

    The background probability is split evenly between background and the new
    classes, so predictions of earlier classes are unchanged. Returns the
    initialized class ids; a model without a prototype bank has seen nothing yet
    and is left alone.
    """
    seen = set(model.prototype_bank.classes)
    new = [int(c) for c in class_ids if c not in seen and c != BACKGROUND]
    if not seen or not new:
        return []
    shift = math.log(len(new) + 1)
    model.weights[new] = model.weights[BACKGROUND]
    model.bias[new] = model.bias[BACKGROUND] - shift
    model.bias[BACKGROUND] -= shift
    return new


def _fmt_rho(rho: Optional[float]) -> str:
    return "n/a" if rho is None else f"{rho:.3f}"


class SessionTrainer:
    def __init__(self, model: PixelClassifierModel, data: SessionData, config: TrainConfig, seed: int):
        self.model = model.copy()
        self.data = data
        self.config = config
        self.seed = seed
        self.session_index = data.spec.index
        if model.featurizer.dimension != model.weights.shape[1]:
            raise ShapeError(f"featurizer dimension {model.featurizer.dimension} does not match classifier "
                             f"{model.weights.shape}")

        self.new_classes: List[int] = []
        if config.init_new_classes and config.epochs > 0:
            self.new_classes = init_new_classes(self.model, data.spec.class_ids)
            if self.new_classes:
                logger.info(f"session {self.session_index}: classes {self.new_classes} start from the background row")

        prefix = f"train/session{self.session_index}"
        self.batch_rng = named_stream(seed, f"{prefix}/batches")
        self.unlabeled_rng = named_stream(seed, f"{prefix}/unlabeled")
        self.gas_rng = named_stream(seed, f"{prefix}/gas")

        self.labeled_features = model.featurizer.batch(data.labeled.images)
        self.labeled_labels = data.labeled.labels.astype(np.int64)
        self.use_consistency = config.pas and config.use_unlabeled and len(data.unlabeled) > 0
        self.unlabeled_features = model.featurizer.batch(data.unlabeled.images) if self.use_consistency else None

        self.prior_bank = model.prototype_bank
        session_bank = compute_prototypes(
            (FeatureMap(f), labels) for f, labels in zip(self.labeled_features, self.labeled_labels))
        self.bank = self.prior_bank.merge(session_bank)
        self.use_replay = config.replay and len(self.prior_bank) > 0

        self.buffer = GradientBuffer(model.weights.shape, config.epsilon) if config.gas else None
        self.teacher_weights = self.model.weights.copy()
        self.teacher_bias = self.model.bias.copy()

    def _effective_weights(self) -> np.ndarray:
        # first step of a session has no gradient statistics yet
        if self.buffer is None or self.buffer.step_count == 0:
            return self.model.weights
        noise_seed = int(self.gas_rng.integers(0, 2 ** 63 - 1))
        return perturb(self.model.weights, self.buffer.noise_scales(), noise_seed, self.config.noise_std)

    def _consistency(self, weights: np.ndarray, indices: np.ndarray, stats: Dict[str, float]
                     ) -> Tuple[float, np.ndarray, np.ndarray]:
        features = pixel_columns(self.unlabeled_features[indices])
        truth = self.data.unlabeled.labels[indices].reshape(-1)
        student_logits = weights @ features + self.model.bias[:, None]
        teacher_logits = self.teacher_weights @ features + self.teacher_bias[:, None]
        feature_map = FeatureMap(_as_map(features))
        mask_student = validate_pixels(_as_map(student_logits), feature_map, self.bank, self.config.filter)
        mask_teacher = validate_pixels(_as_map(teacher_logits), feature_map, self.bank, self.config.filter)

        probs_student = softmax(student_logits, axis=0)
        loss, grad_probs = consistency_loss_gradient(
            _as_map(probs_student), _as_map(softmax(teacher_logits, axis=0)), mask_student, mask_teacher)
        grad_logits = softmax_backward(probs_student, grad_probs.reshape(probs_student.shape), axis=0)

        joint = mask_student.intersect(mask_teacher)
        measured = estimate_coverage_precision(
            joint, np.argmax(teacher_logits, axis=0).reshape(1, -1), truth.reshape(1, -1))
        stats["accepted"] += measured.accepted
        stats["total"] += measured.total
        stats["correct"] += round(measured.rho * measured.accepted)
        return loss, grad_logits @ features.T, grad_logits.sum(axis=1)

    def _unlabeled_batches(self, steps: int) -> List[np.ndarray]:
        count = len(self.data.unlabeled)
        order = self.unlabeled_rng.permutation(count)
        size = self.config.batch_size
        return [np.take(order, np.arange(i * size, (i + 1) * size), mode="wrap") for i in range(steps)]

    def train(self) -> Tuple[PixelClassifierModel, TrainingLog]:
        config = self.config
        log = TrainingLog(self.session_index, self.model.featurizer.fingerprint())
        num_labeled = len(self.data.labeled)
        steps_per_epoch = math.ceil(num_labeled / config.batch_size)
        global_step = 0

        for epoch in range(config.epochs):
            order = self.batch_rng.permutation(num_labeled)
            unlabeled_batches = self._unlabeled_batches(steps_per_epoch) if self.use_consistency else None
            totals = {"ce": 0.0, "cons": 0.0, "proto": 0.0, "total": 0.0}
            filter_stats = {"accepted": 0, "total": 0, "correct": 0}

            for step in range(steps_per_epoch):
                batch = order[step * config.batch_size:(step + 1) * config.batch_size]
                weights = self._effective_weights()

                features = pixel_columns(self.labeled_features[batch])
                labels = self.labeled_labels[batch].reshape(-1)
                ce_loss, grad_logits = cross_entropy_gradient(weights @ features + self.model.bias[:, None], labels)
                grad_w = grad_logits @ features.T
                grad_b = grad_logits.sum(axis=1)
                total = ce_loss

                cons_loss = 0.0
                if self.use_consistency:
                    cons_loss, cons_w, cons_b = self._consistency(weights, unlabeled_batches[step], filter_stats)
                    grad_w = grad_w + config.lambda_cons * cons_w
                    grad_b = grad_b + config.lambda_cons * cons_b
                    total += config.lambda_cons * cons_loss

                proto_loss = 0.0
                if self.use_replay:
                    proto_loss, proto_w = prototype_replay_gradient(self.prior_bank, weights)
                    grad_w = grad_w + config.lambda_proto * proto_w
                    total += config.lambda_proto * proto_loss

                if not math.isfinite(total):
                    raise TrainingDivergenceError(f"non-finite loss in session {self.session_index}", step=global_step)

                # gradient taken at the perturbed weights, applied to the unperturbed ones
                self.model.weights = self.model.weights - config.lr * grad_w
                self.model.bias = self.model.bias - config.lr * grad_b
                if not (np.all(np.isfinite(self.model.weights)) and np.all(np.isfinite(self.model.bias))):
                    raise TrainingDivergenceError(
                        f"non-finite classifier weights in session {self.session_index}", step=global_step)
                if self.buffer is not None:
                    self.buffer.accumulate(grad_w)
                if self.use_consistency:
                    self.teacher_weights = ema_update(self.teacher_weights, self.model.weights, config.ema_alpha)
                    self.teacher_bias = ema_update(self.teacher_bias, self.model.bias, config.ema_alpha)

                totals["ce"] += ce_loss
                totals["cons"] += cons_loss
                totals["proto"] += proto_loss
                totals["total"] += total
                log.step_losses.append(total)
                global_step += 1

            stats = EpochStats(
                epoch=epoch,
                ce_loss=totals["ce"] / steps_per_epoch,
                consistency_loss=totals["cons"] / steps_per_epoch,
                proto_loss=totals["proto"] / steps_per_epoch,
                total_loss=totals["total"] / steps_per_epoch,
            )
            if self.use_consistency and filter_stats["total"] > 0:
                accepted = filter_stats["accepted"]
                stats.measured_f = accepted / filter_stats["total"]
                stats.accepted_pct = 100.0 * stats.measured_f
                # nothing accepted leaves precision undefined
                stats.measured_rho = filter_stats["correct"] / accepted if accepted else None
            log.epochs.append(stats)
            logger.info(
                f"session {self.session_index} epoch {epoch}: total {stats.total_loss:.4f} "
                f"ce {stats.ce_loss:.4f} cons {stats.consistency_loss:.4f} proto {stats.proto_loss:.4f}"
                + (f" accepted {stats.accepted_pct:.1f}% rho {_fmt_rho(stats.measured_rho)}"
                   if stats.accepted_pct is not None else ""))

        self.model.prototype_bank = self.bank
        return self.model, log


def train_session(model: PixelClassifierModel, data: SessionData, config: TrainConfig,
                  seed: int) -> Tuple[PixelClassifierModel, TrainingLog]:
    """Train a copy of `model` on one session; the input model is not modified.

    The returned model's prototype bank holds the earlier sessions' prototypes
    plus this session's, computed from its labeled images.
    """
    return SessionTrainer(model, data, config, seed).train()
