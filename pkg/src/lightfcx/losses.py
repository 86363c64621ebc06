"""Training losses and center-heatmap target encoding.

The classification branch trains against a Gaussian-splatted center heatmap
with a penalty-reduced focal loss (alpha=2, beta=4, normalized by the number
of peak cells). Box regression reads the offset/size maps at the ground-truth
peak cell and combines a GIoU term and an L1 term on normalized
(cx, cy, w, h); the total is cls + 2*giou + 5*l1 at the default weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
_EPS = 1e-12


@dataclass
class LossWeights:
    lam_iou: float = 2.0
    lam_l1: float = 5.0


@dataclass
class BoxTargets:
    heatmap: np.ndarray   # (1, h, w) Gaussian with a single 1.0 peak
    cell: tuple           # (iy, ix) peak cell
    box_norm: np.ndarray  # (cx, cy, w, h) normalized to the crop


def gaussian_radius(height, width, min_overlap=0.7):
    """Largest center displacement (in cells) keeping IoU >= min_overlap."""
    a1 = 1
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - math.sqrt(b1 ** 2 - 4 * a1 * c1)) / (2 * a1)

    a2 = 4
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 - math.sqrt(b2 ** 2 - 4 * a2 * c2)) / (2 * a2)

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / (2 * a3)
    return min(r1, r2, r3)


def splat_gaussian(grid_h, grid_w, cy, cx, radius):
    """Heatmap (grid_h, grid_w) with an exp(-d^2 / (2 sigma^2)) bump, peak 1."""
    sigma = max((2 * radius + 1) / 6.0, 1e-3)
    ys, xs = np.mgrid[0:grid_h, 0:grid_w]
    heat = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))
    heat[heat < np.finfo(np.float64).eps] = 0.0
    return heat


def encode_targets(box_norm, grid_h, grid_w):
    """Normalized (cx, cy, w, h) box -> heatmap + peak cell for one sample."""
    cx, cy, w, h = (float(v) for v in box_norm)
    if w <= 0 or h <= 0:
        raise ContractError(f"box extents must be positive, got w={w}, h={h}")
    cx_cells, cy_cells = cx * grid_w, cy * grid_h
    ix = min(max(int(cx_cells), 0), grid_w - 1)
    iy = min(max(int(cy_cells), 0), grid_h - 1)
    radius = max(0, int(gaussian_radius(math.ceil(h * grid_h),
                                        math.ceil(w * grid_w))))
    heat = splat_gaussian(grid_h, grid_w, iy, ix, radius)
    heat[iy, ix] = 1.0
    return BoxTargets(heatmap=heat[None], cell=(iy, ix),
                      box_norm=np.array([cx, cy, w, h]))


def decode_at_cell(output, b, iy, ix, grid_h, grid_w):
    """Differentiable (cx, cy, w, h) read of a HeadOutput at one cell."""
    off = output.offset[b, :, iy, ix]
    size = output.size[b, :, iy, ix]
    cx = T.mul(T.add(off[0:1], float(ix)), 1.0 / grid_w)
    cy = T.mul(T.add(off[1:2], float(iy)), 1.0 / grid_h)
    return T.concat([cx, cy, size[0:1], size[1:2]], axis=0)


def weighted_focal_loss(pred, target):
    """Penalty-reduced focal loss over center heatmaps.

    pred: Tensor (N, 1, h, w) of sigmoid probabilities; target: array of the
    same shape with peak cells equal to 1. Normalized by the peak count.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"focal loss shapes differ: {pred.shape} vs {target.shape}")
    n_peaks = int((target == 1.0).sum())
    if n_peaks == 0:
        raise ContractError("focal target has no peak cell")
    peak = (target == 1.0).astype(np.float64)
    p = T.clip(pred, _EPS, 1.0 - _EPS)
    pos = T.mul(T.mul(T.powc(T.add(T.neg(p), 1.0), FOCAL_ALPHA), T.log(p)),
                T.Tensor(peak))
    neg_weight = np.power(1.0 - target, FOCAL_BETA) * (1.0 - peak)
    neg = T.mul(T.mul(T.powc(p, FOCAL_ALPHA), T.log(T.add(T.neg(p), 1.0))),
                T.Tensor(neg_weight))
    return T.mul(T.add(T.tsum(pos), T.tsum(neg)), -1.0 / n_peaks)


def _corners(box):
    """Tensor (4,) cxcywh -> scalar corner tensors (x1, y1, x2, y2)."""
    cx, cy, w, h = box[0], box[1], box[2], box[3]
    return (T.add(cx, T.neg(T.mul(w, 0.5))), T.add(cy, T.neg(T.mul(h, 0.5))),
            T.add(cx, T.mul(w, 0.5)), T.add(cy, T.mul(h, 0.5)))


def giou_loss(pred, gt):
    """1 - GIoU between a predicted Tensor box and a numpy gt box (cxcywh)."""
    gt = np.asarray(gt, dtype=np.float64)
    if pred.data[2] <= 0 or pred.data[3] <= 0 or gt[2] <= 0 or gt[3] <= 0:
        raise ContractError(f"boxes must have positive extents: pred "
                            f"{pred.data.tolist()}, gt {gt.tolist()}")
    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1 = gt[0] - gt[2] / 2, gt[1] - gt[3] / 2
    gx2, gy2 = gt[0] + gt[2] / 2, gt[1] + gt[3] / 2
    g = [T.Tensor(np.array(v)) for v in (gx1, gy1, gx2, gy2)]
    iw = T.relu(T.add(T.minimum(px2, g[2]), T.neg(T.maximum(px1, g[0]))))
    ih = T.relu(T.add(T.minimum(py2, g[3]), T.neg(T.maximum(py1, g[1]))))
    inter = T.mul(iw, ih)
    area_p = T.mul(pred[2], pred[3])
    union = T.add(T.add(area_p, float(gt[2] * gt[3])), T.neg(inter))
    hw = T.add(T.maximum(px2, g[2]), T.neg(T.minimum(px1, g[0])))
    hh = T.add(T.maximum(py2, g[3]), T.neg(T.minimum(py1, g[1])))
    hull = T.mul(hw, hh)
    iou = T.div(inter, union)
    giou = T.add(iou, T.neg(T.div(T.add(hull, T.neg(union)), hull)))
    return T.add(T.neg(giou), 1.0)


def l1_loss(pred, gt):
    """Mean absolute error over the 4 normalized box coordinates."""
    gt = np.asarray(gt, dtype=np.float64)
    return T.tmean(T.absval(T.add(pred, T.neg(T.Tensor(gt)))))


def total_loss(output, targets, weights=LossWeights()):
    """Combine cls focal + weighted GIoU + weighted L1 over a batch.

    targets is a list of BoxTargets, one per batch item. Returns the scalar
    loss Tensor and a dict of float components.
    """
    if not targets:
        raise ContractError("total_loss needs at least one target")
    n, _, grid_h, grid_w = output.cls.shape
    if len(targets) != n:
        raise ContractError(f"batch size {n} vs {len(targets)} targets")
    heat = np.stack([t.heatmap for t in targets])
    cls_term = weighted_focal_loss(output.cls, heat)
    giou_terms, l1_terms = [], []
    for b, tgt in enumerate(targets):
        iy, ix = tgt.cell
        pred_box = decode_at_cell(output, b, iy, ix, grid_h, grid_w)
        giou_terms.append(giou_loss(pred_box, tgt.box_norm))
        l1_terms.append(l1_loss(pred_box, tgt.box_norm))
    giou_term = T.mul(_sum_scalars(giou_terms), 1.0 / n)
    l1_term = T.mul(_sum_scalars(l1_terms), 1.0 / n)
    loss = T.add(T.add(cls_term, T.mul(giou_term, weights.lam_iou)),
                 T.mul(l1_term, weights.lam_l1))
    parts = {"cls": cls_term.item(), "giou": giou_term.item(),
             "l1": l1_term.item(), "total": loss.item()}
    return loss, parts


def _sum_scalars(terms):
    out = terms[0]
    for t in terms[1:]:
        out = T.add(out, t)
    return out
