"""One-pass and long-term tracking metrics.

Conventions (the protocol constants the oracles share):
  - success: 21 IoU thresholds over [0, 1] inclusive, strict `IoU > t`;
    the AUC is the plain mean over the grid.
  - precision: center error in pixels, 51 thresholds over [0, 50],
    inclusive `err <= t`; the headline number is PR at 20 px.
  - normalized precision: per-frame center error divided component-wise by
    the ground-truth box extents, 51 thresholds over [0, 0.5], `err <= t`,
    reported as the mean over the sweep.
  - long-term F-score: sweep 101 confidence thresholds over [0, 1]; at each,
    precision is the mean IoU over reported frames and recall the mean IoU
    over target-present frames; report the maximum F1 with its Pr/Re.

Frames whose ground-truth box is all zeros mark an absent target and are
excluded from the overlap statistics of the one-pass metrics.
"""

from __future__ import annotations

import numpy as np

from .boxes import center, iou_xywh
from .errors import ContractError

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_THRESHOLDS = np.linspace(0.0, 50.0, 51)
NORM_PRECISION_THRESHOLDS = np.linspace(0.0, 0.5, 51)
FSCORE_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_REPORT_PX = 20.0


def _check_tracks(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 4:
        raise ContractError(f"track shapes differ or malformed: pred "
                            f"{pred.shape} vs gt {gt.shape}")
    return pred, gt


def _present(gt):
    return ~np.all(gt == 0.0, axis=1)


def success_rate(pred, gt):
    """Per-threshold success curve and its AUC over present frames."""
    pred, gt = _check_tracks(pred, gt)
    keep = _present(gt)
    ious = iou_xywh(pred[keep], gt[keep])
    curve = np.array([(ious > t).mean() if ious.size else 0.0
                      for t in SUCCESS_THRESHOLDS])
    return curve, float(curve.mean())


def precision_rate(pred, gt):
    """Center-error curve, with the fraction of frames within 20 px."""
    pred, gt = _check_tracks(pred, gt)
    keep = _present(gt)
    err = np.linalg.norm(center(pred[keep]) - center(gt[keep]), axis=1)
    curve = np.array([(err <= t).mean() if err.size else 0.0
                      for t in PRECISION_THRESHOLDS])
    pr20 = float((err <= PRECISION_REPORT_PX).mean()) if err.size else 0.0
    return curve, pr20


def normalized_precision(pred, gt):
    """Scale-normalized center error swept over [0, 0.5]."""
    pred, gt = _check_tracks(pred, gt)
    keep = _present(gt)
    diff = center(pred[keep]) - center(gt[keep])
    norm = np.hypot(diff[:, 0] / gt[keep][:, 2], diff[:, 1] / gt[keep][:, 3])
    curve = np.array([(norm <= t).mean() if norm.size else 0.0
                      for t in NORM_PRECISION_THRESHOLDS])
    return curve, float(curve.mean())


def f_score(pred, confidences, gt):
    """Long-term protocol: best F1 over the confidence sweep.

    Reported frames are those with confidence >= tau. IoU counts as zero on
    frames with absent ground truth.
    """
    pred, gt = _check_tracks(pred, gt)
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.shape != (len(pred),):
        raise ContractError(f"need one confidence per frame: got "
                            f"{confidences.shape} for {len(pred)} frames")
    present = _present(gt)
    ious = np.where(present, iou_xywh(pred, gt), 0.0)
    n_present = int(present.sum())
    best = (0.0, 0.0, 0.0, 0.0)  # f, pr, re, tau
    for tau in FSCORE_THRESHOLDS:
        reported = confidences >= tau
        n_rep = int(reported.sum())
        overlap = float(ious[reported].sum())
        pr = overlap / n_rep if n_rep else 0.0
        re = overlap / n_present if n_present else 0.0
        f = 2 * pr * re / (pr + re) if pr + re > 0 else 0.0
        if f > best[0]:
            best = (f, pr, re, float(tau))
    return {"f": best[0], "pr": best[1], "re": best[2], "tau": best[3]}


def evaluate_ope(tracks):
    """tracks: list of (name, pred, gt) -> per-sequence and mean PR/NPR/SR."""
    per_seq = {}
    for name, pred, gt in tracks:
        _, auc = success_rate(pred, gt)
        _, pr = precision_rate(pred, gt)
        _, npr = normalized_precision(pred, gt)
        per_seq[name] = {"SR": auc, "PR": pr, "NPR": npr}
    return {"sequences": per_seq,
            "aggregate": _aggregate(per_seq, ("SR", "PR", "NPR"))}


def evaluate_longterm(tracks):
    """tracks: list of (name, pred, confidences, gt) -> F/Pr/Re report."""
    per_seq = {}
    for name, pred, conf, gt in tracks:
        if conf is None:
            raise ContractError(f"sequence {name}: long-term protocol needs "
                                f"per-frame confidences")
        r = f_score(pred, conf, gt)
        per_seq[name] = {"F": r["f"], "Pr": r["pr"], "Re": r["re"]}
    return {"sequences": per_seq,
            "aggregate": _aggregate(per_seq, ("F", "Pr", "Re"))}


def _aggregate(per_seq, keys):
    """Mean over sequences in sorted-name order, so the dataset score does
    not depend on the order sequences were evaluated in."""
    if not per_seq:
        return {}
    ordered = [per_seq[n] for n in sorted(per_seq)]
    return {k: float(np.mean([v[k] for v in ordered])) for k in keys}
