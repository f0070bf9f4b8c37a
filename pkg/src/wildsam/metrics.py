"""Precision, recall, IoU, Dice and Hausdorff distance for binary masks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .numerics import DimensionError

HD_UNDEFINED = float("nan")


@dataclass
class SegMetrics:
    precision: float
    recall: float
    iou: float
    dice: float
    hd: float
    hd_defined: bool

    def as_dict(self) -> dict:
        return asdict(self)


def boundary(mask) -> np.ndarray:
    """Mask pixels with a 4-neighbour in the background; outside the image counts as background."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def hausdorff(pred, gt) -> float:
    """Symmetric Hausdorff distance between boundary pixel sets, NaN if either is empty."""
    bp, bg = boundary(pred), boundary(gt)
    if not bp.any() and not bg.any():
        return 0.0
    if not bp.any() or not bg.any():
        return HD_UNDEFINED
    # distance from every pixel to the nearest boundary pixel of the other mask
    to_gt = ndimage.distance_transform_edt(~bg)
    to_pred = ndimage.distance_transform_edt(~bp)
    return float(max(to_gt[bp].max(), to_pred[bg].max()))


def compute_metrics(pred, gt) -> SegMetrics:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    n_pred, n_gt = tp + fp, tp + fn
    if n_pred == 0 and n_gt == 0:
        return SegMetrics(1.0, 1.0, 1.0, 1.0, 0.0, True)
    if n_pred == 0 or n_gt == 0:
        return SegMetrics(0.0, 0.0, 0.0, 0.0, HD_UNDEFINED, False)
    hd = hausdorff(pred, gt)
    return SegMetrics(
        precision=tp / n_pred,
        recall=tp / n_gt,
        iou=tp / (tp + fp + fn),
        dice=2 * tp / (2 * tp + fp + fn),
        hd=hd,
        hd_defined=not math.isnan(hd),
    )


def threshold_logits(logits) -> np.ndarray:
    """sigmoid(x) > 0.5, i.e. x > 0."""
    return (np.asarray(logits) > 0).astype(np.uint8)


def aggregate(records) -> dict:
    """Means over per-patch records; undefined HD values are excluded and counted."""
    if not records:
        return {"precision": float("nan"), "recall": float("nan"), "iou": float("nan"),
                "dice": float("nan"), "hd": float("nan"), "hd_undefined": 0, "n": 0}
    out = {k: float(np.mean([r[k] for r in records])) for k in ("precision", "recall", "iou", "dice")}
    defined = [r["hd"] for r in records if r["hd_defined"]]
    out["hd"] = float(np.mean(defined)) if defined else float("nan")
    out["hd_undefined"] = len(records) - len(defined)
    out["n"] = len(records)
    return out
