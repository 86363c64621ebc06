"""Square crop extraction around a target box, with geometry mapping back.

Crop side = context_factor * sqrt(w * h), centered on the box center. Regions
outside the frame are padded with the per-channel frame mean; the window is
resized bicubically to the model input size. All of this happens on uint8
pixels, so crops are bit-reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ContractError


@dataclass
class CropGeometry:
    """Mapping between crop coordinates and frame coordinates."""
    origin_x: float
    origin_y: float
    side: float      # crop window side in frame pixels
    out_size: int    # resized side in crop pixels

    def box_to_frame(self, box_norm):
        """Normalized (cx, cy, w, h) in the crop -> (x, y, w, h) frame pixels."""
        cx, cy, w, h = box_norm
        return np.array([self.origin_x + (cx - w / 2.0) * self.side,
                         self.origin_y + (cy - h / 2.0) * self.side,
                         w * self.side, h * self.side])

    def box_to_crop_norm(self, box_xywh):
        """Frame (x, y, w, h) -> normalized (cx, cy, w, h) in the crop."""
        x, y, w, h = box_xywh
        return np.array([(x + w / 2.0 - self.origin_x) / self.side,
                         (y + h / 2.0 - self.origin_y) / self.side,
                         w / self.side, h / self.side])


def crop_side(box, context_factor):
    w, h = float(box[2]), float(box[3])
    if w < 1.0 or h < 1.0:
        raise ContractError(f"degenerate box: w={w}, h={h}")
    return context_factor * float(np.sqrt(w * h))


def extract_crop(frame, center_xy, side, out_size):
    """Cut a mean-padded square window from an (H, W, 3) uint8 frame."""
    height, width = frame.shape[:2]
    half = side / 2.0
    x0 = int(round(center_xy[0] - half))
    y0 = int(round(center_xy[1] - half))
    win = int(round(side))
    win = max(win, 2)
    pad_mean = frame.reshape(-1, 3).mean(axis=0).astype(np.uint8)
    window = np.empty((win, win, 3), dtype=np.uint8)
    window[:] = pad_mean
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + win, width), min(y0 + win, height)
    if sx1 > sx0 and sy1 > sy0:
        window[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    resized = np.asarray(Image.fromarray(window).resize(
        (out_size, out_size), Image.BICUBIC))
    geom = CropGeometry(origin_x=float(x0), origin_y=float(y0),
                        side=float(win), out_size=out_size)
    return resized, geom


def crop_around_box(frame, box, context_factor, out_size, jitter_xy=(0.0, 0.0),
                    scale=1.0):
    """Crop centered on a box (plus optional center jitter and scale jitter)."""
    side = crop_side(box, context_factor) * scale
    center = (box[0] + box[2] / 2.0 + jitter_xy[0],
              box[1] + box[3] / 2.0 + jitter_xy[1])
    return extract_crop(frame, center, side, out_size)


def to_chw(crop):
    """(S, S, 3) uint8 -> (3, S, S) float64 raw pixel values."""
    return np.ascontiguousarray(crop.transpose(2, 0, 1), dtype=np.float64)
