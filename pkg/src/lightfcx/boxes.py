"""Plain-numpy axis-aligned box arithmetic.

Boxes are (x, y, w, h) with the origin at the top-left corner unless a
function says otherwise; corners are x2 = x + w (continuous convention).
"""

from __future__ import annotations

import numpy as np


def iou_xywh(a, b):
    """Elementwise IoU of (..., 4) box arrays in (x, y, w, h)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax2, ay2 = a[..., 0] + a[..., 2], a[..., 1] + a[..., 3]
    bx2, by2 = b[..., 0] + b[..., 2], b[..., 1] + b[..., 3]
    iw = np.minimum(ax2, bx2) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(ay2, by2) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def center(box):
    box = np.asarray(box, dtype=np.float64)
    return np.stack([box[..., 0] + box[..., 2] / 2.0,
                     box[..., 1] + box[..., 3] / 2.0], axis=-1)


def cxcywh_to_xywh(box):
    box = np.asarray(box, dtype=np.float64)
    return np.stack([box[..., 0] - box[..., 2] / 2.0,
                     box[..., 1] - box[..., 3] / 2.0,
                     box[..., 2], box[..., 3]], axis=-1)


def xywh_to_cxcywh(box):
    box = np.asarray(box, dtype=np.float64)
    return np.stack([box[..., 0] + box[..., 2] / 2.0,
                     box[..., 1] + box[..., 3] / 2.0,
                     box[..., 2], box[..., 3]], axis=-1)


def clip_to_image(box, width, height, min_size=2.0):
    """Clamp an (x, y, w, h) box to image bounds, keeping a minimum extent."""
    x, y, w, h = box
    w = min(max(w, min_size), width)
    h = min(max(h, min_size), height)
    x = min(max(x, 0.0), width - w)
    y = min(max(y, 0.0), height - h)
    return np.array([x, y, w, h])
