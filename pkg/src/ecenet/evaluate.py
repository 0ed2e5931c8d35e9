"""Segmentation evaluation: confusion-matrix accumulation and mean IoU over
classes present in the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .losses import IGNORE_LABEL
from .tensor import Tensor


class ConfusionMatrix:
    """N x N counts; rows are ground truth, columns are prediction."""

    def __init__(self, n_classes: int):
        if n_classes < 1:
            raise ContractError(f"need at least one class, got {n_classes}")
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def update(self, gt: np.ndarray, pred: np.ndarray) -> None:
        gt = np.asarray(gt).reshape(-1)
        pred = np.asarray(pred).reshape(-1)
        if gt.shape != pred.shape:
            raise ContractError(f"gt {gt.shape} vs pred {pred.shape}")
        keep = gt != IGNORE_LABEL
        gt = gt[keep]
        pred = pred[keep]
        n = self.n_classes
        flat = np.bincount(gt.astype(np.int64) * n + pred.astype(np.int64),
                           minlength=n * n)
        self.counts += flat.reshape(n, n)

    def iou(self):
        """(per-class IoU with nan for absent classes, mIoU over present ones)."""
        diag = np.diag(self.counts).astype(np.float64)
        rows = self.counts.sum(axis=1).astype(np.float64)
        cols = self.counts.sum(axis=0).astype(np.float64)
        union = rows + cols - diag
        per_class = np.full(self.n_classes, np.nan)
        present = rows > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class[present] = diag[present] / union[present]
        if not present.any():
            raise ContractError("no classes present in ground truth")
        return per_class, float(np.nanmean(per_class[present]))


@dataclass
class EvalResult:
    miou: float
    per_class: np.ndarray
    confusion: ConfusionMatrix


def predict_labels(model, image: np.ndarray) -> np.ndarray:
    """Argmax class map for one image (no gradient recording)."""
    out = model.forward(Tensor(np.asarray(image), dtype=model.dtype))
    return np.argmax(out.seg_logits.data, axis=0)


def evaluate(model, samples) -> EvalResult:
    """mIoU of a model over SegSamples (confusion aggregated across samples)."""
    samples = list(samples)
    if not samples:
        raise ContractError("evaluate: empty dataset")
    cm = ConfusionMatrix(model.cfg.n_classes)
    for sample in samples:
        pred = predict_labels(model, sample.image)
        cm.update(sample.gt, pred)
    per_class, miou = cm.iou()
    return EvalResult(miou=miou, per_class=per_class, confusion=cm)
