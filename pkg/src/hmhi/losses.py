"""Segmentation loss: weighted BCE + focal + dice on mask logits."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossConfig:
    w_bce: float = 1.0
    w_focal: float = 1.0
    w_dice: float = 1.0
    gamma: float = 2.0
    dice_eps: float = 1.0

    def __post_init__(self):
        w = (self.w_bce, self.w_focal, self.w_dice)
        if min(w) < 0 or max(w) == 0:
            raise ValueError(f"loss weights must be >= 0 and not all zero, got {w}")


def _as_mask(gt, shape):
    g = np.asarray(gt, dtype=np.float64).reshape(shape)
    if not np.isin(g, (0.0, 1.0)).all():
        raise ValueError("ground-truth mask must be binary")
    return g


def combined_loss(logits, gt, cfg=LossConfig()):
    if int(np.prod(np.shape(gt))) != logits.size:
        raise ShapeError(f"logits {logits.shape} vs mask {np.shape(gt)}")
    g = Tensor(_as_mask(gt, logits.shape))
    p = T.sigmoid(logits)
    q = 1.0 - p
    log_p, log_q = T.log(p), T.log(q)
    total = Tensor(0.0)
    if cfg.w_bce:
        bce = -T.mean(g * log_p + (1.0 - g) * log_q)
        total = total + T.scale(bce, cfg.w_bce)
    if cfg.w_focal:
        focal = -T.mean(g * T.power(q, cfg.gamma) * log_p
                        + (1.0 - g) * T.power(p, cfg.gamma) * log_q)
        total = total + T.scale(focal, cfg.w_focal)
    if cfg.w_dice:
        num = T.scale(T.sum_(p * g), 2.0) + cfg.dice_eps
        den = T.sum_(p) + float(g.data.sum()) + cfg.dice_eps
        total = total + T.scale(1.0 - num / den, cfg.w_dice)
    return total
