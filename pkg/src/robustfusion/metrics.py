"""Confusion-matrix segmentation metrics."""

from __future__ import annotations

import numpy as np


class ConfusionMatrix:
    """``counts[t, p]`` is the number of pixels of true class t predicted as p."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred: np.ndarray, truth: np.ndarray, ignore_id: int | None = None) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
        if ignore_id is not None:
            keep = truth != ignore_id
            pred, truth = pred[keep], truth[keep]
        c = self.num_classes
        if pred.size and (pred.min() < 0 or pred.max() >= c or truth.min() < 0 or truth.max() >= c):
            raise ValueError("class id out of range")
        self.counts += np.bincount(truth.ravel() * c + pred.ravel(), minlength=c * c).reshape(c, c)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _require_nonempty(self):
        if self.total == 0:
            raise ValueError("confusion matrix is empty")

    def class_iou(self) -> np.ndarray:
        """Per-class IoU; NaN for classes absent from the truth or with empty union."""
        self._require_nonempty()
        tp = np.diag(self.counts).astype(float)
        in_truth = self.counts.sum(axis=1)
        union = in_truth + self.counts.sum(axis=0) - tp
        iou = np.full(self.num_classes, np.nan)
        ok = (in_truth > 0) & (union > 0)
        iou[ok] = tp[ok] / union[ok]
        return iou


def pixel_acc(cm: ConfusionMatrix) -> float:
    cm._require_nonempty()
    return float(np.trace(cm.counts) / cm.total)


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes that occur in the ground truth."""
    return float(np.nanmean(cm.class_iou()))


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, truth: np.ndarray) -> ConfusionMatrix:
    return cm.accumulate(pred, truth)


def random_predictor_miou(class_freq: np.ndarray) -> float:
    """Expected-count mIoU of a predictor drawing classes uniformly at random.

    With truth frequencies f_c and prediction probability 1/C, class c has
    tp = f_c/C, fp = (1-f_c)/C and fn = f_c(1-1/C) per pixel.
    """
    f = np.asarray(class_freq, dtype=float)
    f = f / f.sum()
    c = len(f)
    present = f > 0
    tp = f / c
    union = tp + (1 - f) / c + f * (1 - 1 / c)
    return float(np.mean(tp[present] / union[present]))
