"""UVOS / VSOD evaluation metrics on numpy masks.

Conventions:
  * J of two empty masks is 1.
  * boundary_F follows the DAVIS toolkit: if both boundaries are empty F = 1,
    if exactly one is empty F = 0, and F = 0 whenever P + R = 0.
  * max_f_measure uses beta^2 = 0.3 over thresholds i/256, i = 1..255,
    foreground where prob >= threshold.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

BETA2 = 0.3
THRESHOLDS = np.arange(1, 256) / 256.0
_CROSS = ndimage.generate_binary_structure(2, 1)


def _pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def region_similarity_J(pred, gt):
    pred, gt = _pair(pred, gt)
    pred, gt = pred.astype(bool), gt.astype(bool)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def boundary_map(mask):
    """Foreground pixels with a 4-neighbour outside the mask (image border counts)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _CROSS, border_value=0)


def default_tolerance(shape):
    return int(math.ceil(0.008 * math.hypot(*shape)))


def boundary_F(pred, gt, tolerance_px=None):
    pred, gt = _pair(pred, gt)
    tol = default_tolerance(gt.shape) if tolerance_px is None else int(tolerance_px)
    bp, bg = boundary_map(pred), boundary_map(gt)
    n_p, n_g = np.count_nonzero(bp), np.count_nonzero(bg)
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    # Chebyshev ball of radius tol is a (2 tol + 1)^2 square
    window = np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool)
    near_g = ndimage.binary_dilation(bg, window) if tol else bg
    near_p = ndimage.binary_dilation(bp, window) if tol else bp
    precision = np.count_nonzero(bp & near_g) / n_p
    recall = np.count_nonzero(bg & near_p) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mae(pred_prob, gt):
    pred_prob, gt = _pair(pred_prob, gt)
    pred_prob = pred_prob.astype(np.float64)
    if pred_prob.size and (pred_prob.min() < 0 or pred_prob.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean(np.abs(pred_prob - gt.astype(np.float64))))


def max_f_measure(pred_prob, gt, beta2=BETA2):
    pred_prob, gt = _pair(pred_prob, gt)
    p = pred_prob.astype(np.float64).ravel()
    g = gt.astype(bool).ravel()
    # counts of pixels with p >= t for every threshold via sorted search
    order = np.sort(p)
    pos_sorted = np.sort(p[g])
    n_pred = p.size - np.searchsorted(order, THRESHOLDS, side="left")
    tp = pos_sorted.size - np.searchsorted(pos_sorted, THRESHOLDS, side="left")
    n_gt = g.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
        recall = tp / n_gt if n_gt else np.zeros_like(precision)
        denom = beta2 * precision + recall
        f = np.where(denom > 0, (1 + beta2) * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    return float(f.max())


@dataclass
class MetricReport:
    name: str
    J: list = field(default_factory=list)
    F: list = field(default_factory=list)
    MAE: list = field(default_factory=list)
    Fm: list = field(default_factory=list)

    def add(self, prob, gt, threshold=0.5, tolerance_px=None):
        prob = np.asarray(prob, dtype=np.float64)
        binary = prob >= threshold
        self.J.append(float(region_similarity_J(binary, gt)))
        self.F.append(float(boundary_F(binary, gt, tolerance_px)))
        self.MAE.append(mae(prob, gt))
        self.Fm.append(max_f_measure(prob, gt))

    @property
    def frames(self):
        return len(self.J)

    def summary(self):
        j = float(np.mean(self.J)) if self.J else float("nan")
        f = float(np.mean(self.F)) if self.F else float("nan")
        return {
            "name": self.name,
            "frames": self.frames,
            "J": j,
            "F": f,
            "J&F": (j + f) / 2,
            "MAE": float(np.mean(self.MAE)) if self.MAE else float("nan"),
            "Fm": float(np.mean(self.Fm)) if self.Fm else float("nan"),
            "per_frame": {k: v for k, v in asdict(self).items() if k != "name"},
        }

    @classmethod
    def aggregate(cls, reports, name="aggregate"):
        out = cls(name)
        for r in reports:
            out.J += r.J
            out.F += r.F
            out.MAE += r.MAE
            out.Fm += r.Fm
        return out


def write_jsonl(reports, path, aggregate=True):
    """One JSON object per sequence, then an aggregate line."""
    with open(path, "w") as fp:
        for r in reports:
            fp.write(json.dumps(r.summary(), sort_keys=True) + "\n")
        if aggregate:
            summary = MetricReport.aggregate(reports).summary()
            summary.pop("per_frame")
            fp.write(json.dumps(summary, sort_keys=True) + "\n")
