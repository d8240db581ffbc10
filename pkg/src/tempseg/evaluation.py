"""Per-class IoU and mIoU over point predictions.

The mean defaults to classes present in the ground truth; absent classes can
instead be counted as zero with ``present_only=False``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, StructuralError
from .frames import ClassMap, Frame


@dataclass
class ConfusionMatrix:
    """Accumulated counts; rows are ground truth, columns predictions.

    Points whose ground-truth label is an ignore id never enter the counts.
    """

    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, truth: np.ndarray, predicted: np.ndarray, ignore_ids=frozenset()) -> None:
        truth = np.asarray(truth, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if truth.shape != predicted.shape:
            raise StructuralError(
                f"label/prediction length mismatch: {truth.shape} vs {predicted.shape}"
            )
        n = self.num_classes
        keep = (truth >= 0) & (truth < n) & (predicted >= 0) & (predicted < n)
        for ig in ignore_ids:
            keep &= truth != ig
        flat = truth[keep] * n + predicted[keep]
        self.counts += np.bincount(flat, minlength=n * n).reshape(n, n)

    def iou(self) -> np.ndarray:
        """Per-class IoU = TP / (TP + FP + FN); NaN where the class never occurs."""
        tp = np.diag(self.counts).astype(np.float64)
        fn = self.counts.sum(axis=1) - tp
        fp = self.counts.sum(axis=0) - tp
        denom = tp + fp + fn
        with np.errstate(invalid="ignore"):
            return np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)

    def present(self) -> np.ndarray:
        """Classes with at least one ground-truth point."""
        return self.counts.sum(axis=1) > 0


@dataclass
class EvalReport:
    class_map: ClassMap
    confusion: ConfusionMatrix
    per_class_iou: np.ndarray
    miou: float

    def iou_by_name(self) -> dict[str, float]:
        return {
            self.class_map.names[i]: float(self.per_class_iou[i])
            for i in self.class_map.scored_ids()
        }


def summarize(
    confusion: ConfusionMatrix, class_map: ClassMap, present_only: bool = True
) -> EvalReport:
    iou = confusion.iou()
    scored = np.array(class_map.scored_ids(), dtype=np.int64)
    if present_only:
        scored = scored[confusion.present()[scored]]
    if scored.size == 0:
        raise InputError("no scored class is present in the ground truth")
    values = iou[scored]
    values = np.where(np.isnan(values), 0.0, values)
    return EvalReport(class_map, confusion, iou, float(values.mean()))


def evaluate(
    predictions: Sequence,
    frames: Sequence[Frame],
    class_map: ClassMap,
    present_only: bool = True,
) -> EvalReport:
    """Score per-point predictions against ground-truth frames."""
    if len(predictions) != len(frames):
        raise StructuralError(
            f"{len(predictions)} prediction sets for {len(frames)} frames"
        )
    confusion = ConfusionMatrix.empty(class_map.num_classes)
    for pred, frame in zip(predictions, frames):
        if frame.labels is None:
            raise InputError(f"frame {frame.frame_index} has no labels")
        ids = pred.class_ids if hasattr(pred, "class_ids") else np.asarray(pred)
        if len(ids) != len(frame):
            raise StructuralError(
                f"frame {frame.frame_index}: {len(ids)} predictions for {len(frame)} points"
            )
        confusion.update(frame.labels, ids, class_map.ignore_ids)
    return summarize(confusion, class_map, present_only)
