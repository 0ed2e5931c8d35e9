"""Training losses: per-pixel cross entropy, binary focal and dice mask
losses, plus label helpers (nearest-neighbor downsample, one-hot encoding).

The ignore label 255 is excluded everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import DataError, DimensionError
from .tensor import Tensor

IGNORE_LABEL = 255


@dataclass
class LossWeights:
    lambda_div: float = 0.2
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25


def downsample_nearest(labels: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Nearest-neighbor label downsample with half-pixel centers."""
    h, w = labels.shape
    rows = np.minimum((np.arange(oh) + 0.5) * (h / oh), h - 1).astype(np.int64)
    cols = np.minimum((np.arange(ow) + 0.5) * (w / ow), w - 1).astype(np.int64)
    return labels[rows[:, None], cols[None, :]]


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float64):
    """(N, H, W) one-hot planes plus the valid-pixel mask (ignore excluded)."""
    valid = labels != IGNORE_LABEL
    if np.any((labels < 0) | ((labels >= n_classes) & valid)):
        raise DataError(
            f"label out of range [0, {n_classes}) (ignore={IGNORE_LABEL})"
        )
    planes = np.zeros((n_classes,) + labels.shape, dtype=dtype)
    safe = np.where(valid, labels, 0)
    np.put_along_axis(planes, safe[None], valid[None].astype(dtype), axis=0)
    return planes, valid


def cross_entropy_loss(seg_logits: Tensor, gt: np.ndarray) -> Tensor:
    """Mean over non-ignored pixels of -log softmax(logits)[gt]."""
    n = seg_logits.shape[0]
    if seg_logits.ndim != 3 or gt.shape != seg_logits.shape[1:]:
        raise DimensionError(
            f"cross_entropy: logits {seg_logits.shape} vs labels {gt.shape}"
        )
    planes, valid = one_hot(gt, n, dtype=seg_logits.dtype)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DataError("cross_entropy: every pixel is ignored")
    log_probs = ops.log_softmax(seg_logits, axis=0)
    picked = ops.sum(ops.mul(log_probs, Tensor(planes)))
    return ops.scale(picked, -1.0 / n_valid)


def focal_loss(mask_logits: Tensor, gt_onehot: np.ndarray,
               gamma: float = 2.0, alpha: float = 0.25,
               valid: np.ndarray | None = None) -> Tensor:
    """Mean over class-pixels of -alpha_t (1 - p_t)^gamma log(p_t), sigmoid p."""
    if mask_logits.shape != gt_onehot.shape:
        raise DimensionError(
            f"focal: logits {mask_logits.shape} vs targets {gt_onehot.shape}"
        )
    y = gt_onehot.astype(mask_logits.dtype)
    yt = Tensor(y)
    not_yt = Tensor(1.0 - y)
    p = ops.sigmoid(mask_logits)
    pt = ops.add(ops.mul(yt, p), ops.mul(not_yt, ops.sub(1.0, p)))
    log_pt = ops.add(
        ops.mul(yt, ops.log_sigmoid(mask_logits)),
        ops.mul(not_yt, ops.log_sigmoid(ops.neg(mask_logits))),
    )
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    term = ops.mul(Tensor(alpha_t),
                   ops.mul(ops.pow_const(ops.sub(1.0, pt), gamma), log_pt))
    if valid is not None and not valid.all():
        keep = valid.astype(mask_logits.dtype)[None]
        count = mask_logits.shape[0] * int(valid.sum())
        return ops.scale(ops.sum(ops.mul(term, Tensor(keep))), -1.0 / count)
    return ops.neg(ops.mean(term))


def dice_loss(mask_logits: Tensor, gt_onehot: np.ndarray, eps: float = 1.0,
              valid: np.ndarray | None = None) -> Tensor:
    """1 - mean over classes of (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)."""
    if mask_logits.shape != gt_onehot.shape:
        raise DimensionError(
            f"dice: logits {mask_logits.shape} vs targets {gt_onehot.shape}"
        )
    y = gt_onehot.astype(mask_logits.dtype)
    p = ops.sigmoid(mask_logits)
    if valid is not None and not valid.all():
        p = ops.mul(p, Tensor(valid.astype(mask_logits.dtype)[None]))
    inter = ops.sum(ops.mul(p, Tensor(y)), axis=(1, 2))
    num = ops.add(ops.scale(inter, 2.0), eps)
    den = ops.add(ops.add(ops.sum(p, axis=(1, 2)), Tensor(y.sum(axis=(1, 2)))), eps)
    return ops.sub(1.0, ops.mean(ops.div(num, den)))
