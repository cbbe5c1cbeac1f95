"""Trajectory and classification metrics.

Trajectory arrays put agents/windows in the leading axes, time in the
second-to-last axis and per-point values in the last axis. Point arrays are
either ``(x, y, v, yaw_deg)`` or raw states ``(x, y, v, qw, qz)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


def to_points(states: np.ndarray) -> np.ndarray:
    """Convert ``(..., 5)`` states to ``(..., 4)`` points with yaw in degrees."""
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] == 4:
        return states
    if states.shape[-1] != 5:
        raise ValueError(f"expected 4 or 5 values per point, got {states.shape[-1]}")
    yaw = np.degrees(2.0 * np.arctan2(states[..., 4], states[..., 3]))
    return np.concatenate([states[..., :3], yaw[..., None]], axis=-1)


def _check(pred, gt, mask):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask) > 0
    if pred.shape[:-1] != gt.shape[:-1] or mask.shape != pred.shape[:-1]:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    return pred, gt, mask


def displacement(pred, gt) -> np.ndarray:
    return np.hypot(pred[..., 0] - gt[..., 0], pred[..., 1] - gt[..., 1])


def ade(pred, gt, mask) -> float:
    """Mean Euclidean distance over masked-in points."""
    pred, gt, mask = _check(pred, gt, mask)
    n = mask.sum()
    if n == 0:
        raise ValueError("ADE needs at least one masked-in point")
    return float(displacement(pred, gt)[mask].sum() / n)


def fde(pred, gt, mask) -> float:
    """Mean over agents of the distance at each agent's last masked-in step."""
    pred, gt, mask = _check(pred, gt, mask)
    T = mask.shape[-1]
    m = mask.reshape(-1, T)
    d = displacement(pred, gt).reshape(-1, T)
    has = m.any(axis=1)
    if not has.any():
        raise ValueError("FDE needs at least one agent with a masked-in point")
    last = T - 1 - np.argmax(m[:, ::-1], axis=1)
    return float(d[has, last[has]].mean())


def wrap_degrees(diff) -> np.ndarray:
    """Absolute angular difference folded into [0, 180]."""
    return np.abs((np.asarray(diff) + 180.0) % 360.0 - 180.0)


def orientation_velocity_error(pred, gt, mask) -> tuple[float, float]:
    """Mean wrapped yaw error (degrees) and mean absolute speed error (m/s)."""
    pred, gt = to_points(pred), to_points(gt)
    pred, gt, mask = _check(pred, gt, mask)
    n = mask.sum()
    if n == 0:
        raise ValueError("orientation/velocity error needs at least one masked-in point")
    yaw = wrap_degrees(pred[..., 3] - gt[..., 3])[mask].sum() / n
    vel = np.abs(pred[..., 2] - gt[..., 2])[mask].sum() / n
    return float(yaw), float(vel)


@dataclass
class TrajectoryScore:
    ade: float
    fde: float
    orientation_error: float
    velocity_error: float
    samples: int


def score_trajectories(pred, gt, mask) -> TrajectoryScore:
    pred, gt = to_points(pred), to_points(gt)
    o, v = orientation_velocity_error(pred, gt, mask)
    return TrajectoryScore(ade(pred, gt, mask), fde(pred, gt, mask), o, v, int((np.asarray(mask) > 0).sum()))


# ----------------------------------------------------------------------
# classification
# ----------------------------------------------------------------------


def confusion_matrix(predicted, truth, n_classes: int) -> np.ndarray:
    """Counts with rows = predicted class, columns = ground-truth class."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (predicted, truth), 1)
    return cm


@dataclass
class ClassificationReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return asdict(self)


def classification_report(predicted, truth, n_classes: int) -> ClassificationReport:
    """Accuracy and per-class precision ``TP/(TP+FP)`` / recall ``TP/(TP+FN)``; 0 when undefined."""
    predicted = np.asarray(predicted, dtype=np.int64)
    if len(predicted) == 0:
        raise ValueError("classification report needs at least one sample")
    cm = confusion_matrix(predicted, truth, n_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=1)
    true_tot = cm.sum(axis=0)
    prec = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros(n_classes), where=true_tot > 0)
    return ClassificationReport(float(tp.sum() / cm.sum()), prec.tolist(), rec.tolist(), cm.tolist())


@dataclass
class BinaryReport:
    precision: float
    recall: float
    accuracy: float
    confusion: list[list[int]]


def positive_class_report(predicted, truth, positive: int = 0) -> BinaryReport:
    """Precision/recall for one class (a true positive needs both labels to be ``positive``)."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(predicted) == 0:
        raise ValueError("report needs at least one sample")
    tp = int(np.sum((predicted == positive) & (truth == positive)))
    fp = int(np.sum((predicted == positive) & (truth != positive)))
    fn = int(np.sum((predicted != positive) & (truth == positive)))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    acc = float(np.mean(predicted == truth))
    return BinaryReport(prec, rec, acc, confusion_matrix(predicted, truth, 2).tolist())


def pr_curve(scores, labels) -> list[tuple[float, float, float]]:
    """``(threshold, precision, recall)`` for each distinct score, highest threshold first.

    A sample counts as predicted positive when its score is >= the threshold.
    Recall is 0 when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.size == 0:
        raise ValueError("pr_curve needs at least one score")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in shape")
    if np.any((scores < 0) | (scores > 1)):
        raise ValueError("scores must lie in [0, 1]")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    tp = np.cumsum(l)
    k = np.arange(1, len(s) + 1)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    P = int(labels.sum())
    return [(float(s[i]), float(tp[i] / k[i]), float(tp[i] / P) if P else 0.0) for i in last]


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------


def write_rows(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(x) if isinstance(x, float) else x for x in r])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_pr_curve(path, curve) -> None:
    write_rows(path, ["threshold", "precision", "recall"], curve)
