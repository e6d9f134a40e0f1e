"""Segmentation and continual-learning metrics.

Dice and IoU per class, the seen/new/harmonic breakdown, Total Drop over a
session score trajectory, and forgetting / backward transfer over the
session-by-session score matrix.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from bench_data import BACKGROUND, ContinualProtocol
from errors import DomainError, require_same_shape


def dice_iou(predicted: np.ndarray, truth: np.ndarray, class_id: int) -> Optional[Tuple[float, float]]:
    """(Dice, IoU) for one class; None when the class is absent from both grids."""
    require_same_shape(np.asarray(predicted), np.asarray(truth), "class grid")
    pred_mask = np.asarray(predicted) == class_id
    true_mask = np.asarray(truth) == class_id
    pred_count = int(np.count_nonzero(pred_mask))
    true_count = int(np.count_nonzero(true_mask))
    if pred_count + true_count == 0:
        return None
    intersection = int(np.count_nonzero(pred_mask & true_mask))
    union = pred_count + true_count - intersection
    return 2.0 * intersection / (pred_count + true_count), intersection / union


def harmonic_mean(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


@dataclass
class ClassScore:
    session: int
    class_id: int
    dice: float
    iou: float

    def to_dict(self) -> Dict[str, Any]:
        return {"session": self.session, "class": self.class_id, "dice": self.dice, "iou": self.iou}


@dataclass
class MetricsReport:
    session_index: int
    class_scores: List[ClassScore] = field(default_factory=list)
    pooled: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    background: Optional[Tuple[float, float]] = None
    mean_dice: float = 0.0
    miou: float = 0.0
    seen: Optional[float] = None
    new: Optional[float] = None
    harmonic: Optional[float] = None

    def session_mean(self, session: int) -> Optional[float]:
        return _mean([s.dice for s in self.class_scores if s.session == session])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "session_index": self.session_index,
            "mean_dice": self.mean_dice,
            "miou": self.miou,
            "seen": self.seen,
            "new": self.new,
            "harmonic": self.harmonic,
            "background": list(self.background) if self.background else None,
            "per_class": {str(c): {"dice": d, "iou": i} for c, (d, i) in sorted(self.pooled.items())},
            "per_session_class": [s.to_dict() for s in self.class_scores],
        }


def evaluate_predictions(predictions: Sequence[np.ndarray], truths: Sequence[np.ndarray],
                         protocol: ContinualProtocol, session_index: int) -> MetricsReport:
    """Score predictions on the test sets of sessions 0..session_index.

    `predictions[s]` and `truths[s]` are N x H x W grids for session s.
    Background is reported separately and excluded from every aggregate.
    """
    if len(predictions) != session_index + 1 or len(truths) != session_index + 1:
        raise DomainError(f"need test sets for sessions 0..{session_index}, got {len(truths)}")
    for s, truth in enumerate(truths):
        if np.asarray(truth).size == 0:
            raise DomainError(f"test set of session {s} is empty")

    report = MetricsReport(session_index=session_index)
    for s in range(session_index + 1):
        for class_id in protocol.sessions[s].class_ids:
            scores = dice_iou(predictions[s], truths[s], class_id)
            if scores is not None:
                report.class_scores.append(ClassScore(s, class_id, *scores))

    all_pred = np.concatenate([np.asarray(p).reshape(-1) for p in predictions])
    all_true = np.concatenate([np.asarray(t).reshape(-1) for t in truths])
    for class_id in protocol.classes_up_to(session_index):
        scores = dice_iou(all_pred, all_true, class_id)
        if scores is not None:
            report.pooled[class_id] = scores
    report.background = dice_iou(all_pred, all_true, BACKGROUND)

    report.mean_dice = _mean([d for d, _ in report.pooled.values()]) or 0.0
    report.miou = _mean([i for _, i in report.pooled.values()]) or 0.0
    report.new = report.session_mean(session_index)
    if session_index > 0:
        report.seen = _mean([s.dice for s in report.class_scores if s.session < session_index])
        if report.seen is not None and report.new is not None:
            report.harmonic = harmonic_mean(report.seen, report.new)
    return report


def total_drop(session_scores: Sequence[float]) -> float:
    """100 * sum of positive session-to-session decreases / first score."""
    scores = np.asarray(session_scores, dtype=np.float64)
    if scores.size == 0 or not scores[0] > 0:
        raise DomainError("total drop needs a positive base-session score")
    if np.any(scores < 0) or np.any(scores > 1):
        raise DomainError("session scores must lie in [0, 1]")
    drops = np.maximum(0.0, scores[:-1] - scores[1:])
    return float(100.0 * np.sum(drops) / scores[0])


class ContinualScoreMatrix:
    """scores[t, s]: mean Dice on session s's classes and test set after training session t."""

    def __init__(self, n_sessions: int):
        self.n_sessions = n_sessions
        self.scores = np.full((n_sessions, n_sessions), np.nan)

    def update(self, trained_session: int, eval_session: int, score: float):
        self.scores[trained_session, eval_session] = score

    def forgetting(self) -> float:
        if self.n_sessions <= 1:
            return 0.0
        last = self.n_sessions - 1
        values = [np.nanmax(self.scores[s:last, s]) - self.scores[last, s] for s in range(last)]
        return float(np.nanmean(values))

    def backward_transfer(self) -> float:
        if self.n_sessions <= 1:
            return 0.0
        last = self.n_sessions - 1
        return float(np.nanmean([self.scores[last, s] - self.scores[s, s] for s in range(last)]))

    def compute_all(self) -> Dict[str, float]:
        return {"forgetting": self.forgetting(), "bwt": self.backward_transfer()}

    def to_list(self) -> List[List[Optional[float]]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.scores]
