"""Sequence ingestion and synthetic sequence generation.

A sequence directory holds ``visible/`` plus one modality directory
(``infrared``/``depth``/``event``/``sonar``), a ``groundtruth.txt`` with one
comma- or tab-separated ``x,y,w,h`` line per frame, and for rgbs an extra
``groundtruth_sonar.txt`` with the sonar-frame boxes. Frames sort
lexicographically; only PNG and BMP are decoded. All-zero boxes mark an
absent target.

The synthetic generator renders a textured target on a noise background with
exact ground truth; the X modality inverts the contrast and carries its own
noise so the two modalities genuinely differ.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

IMAGE_SUFFIXES = (".png", ".bmp")


@dataclass
class SequencePair:
    name: str
    rgb_frames: list           # (H, W, 3) uint8 arrays
    x_frames: list
    gt_rgb: np.ndarray          # (n, 4) x,y,w,h per frame
    gt_x: np.ndarray = None     # second box track, rgbs only
    modality: str = "rgbt"

    def __len__(self):
        return len(self.rgb_frames)


def imread(path):
    """Decode a PNG/BMP file to (H, W, 3) uint8, replicating single channels."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise DataError(f"{path}: only PNG and BMP are supported")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return np.ascontiguousarray(arr, dtype=np.uint8)


def imwrite(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def parse_groundtruth(path):
    """One box per line, comma or tab separated; errors carry line numbers."""
    boxes = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read ground truth {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.replace("\t", ",").split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 values, got {len(parts)}")
        try:
            boxes.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparseable box {line!r}") from exc
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def _frame_paths(directory):
    return sorted(p for p in Path(directory).iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def load_sequence(directory, modality_dir, name=None, modality="rgbt"):
    """Load a sequence directory; every anomaly is a reported error."""
    directory = Path(directory)
    vis_dir = directory / "visible"
    x_dir = directory / modality_dir
    if not vis_dir.is_dir():
        raise DataError(f"{directory}: missing visible/ directory")
    if not x_dir.is_dir():
        raise DataError(f"{directory}: missing {modality_dir}/ directory")
    rgb_paths = _frame_paths(vis_dir)
    x_paths = _frame_paths(x_dir)
    if len(rgb_paths) != len(x_paths):
        raise DataError(f"{directory}: frame counts differ: visible has "
                        f"{len(rgb_paths)}, {modality_dir} has {len(x_paths)}")
    if not rgb_paths:
        raise DataError(f"{directory}: no frames found")
    gt_rgb = parse_groundtruth(directory / "groundtruth.txt")
    if len(gt_rgb) != len(rgb_paths):
        raise DataError(f"{directory}: {len(gt_rgb)} ground-truth lines for "
                        f"{len(rgb_paths)} frames")
    gt_x = None
    sonar_gt = directory / "groundtruth_sonar.txt"
    if modality == "rgbs":
        if not sonar_gt.is_file():
            raise DataError(f"{directory}: rgbs sequence needs groundtruth_sonar.txt")
        gt_x = parse_groundtruth(sonar_gt)
        if len(gt_x) != len(x_paths):
            raise DataError(f"{directory}: {len(gt_x)} sonar ground-truth lines "
                            f"for {len(x_paths)} frames")
    return SequencePair(name=name or directory.name,
                        rgb_frames=[imread(p) for p in rgb_paths],
                        x_frames=[imread(p) for p in x_paths],
                        gt_rgb=gt_rgb, gt_x=gt_x, modality=modality)


def write_sequence(seq, directory, modality_dir):
    """Materialize an in-memory sequence into the on-disk layout."""
    directory = Path(directory)
    (directory / "visible").mkdir(parents=True, exist_ok=True)
    (directory / modality_dir).mkdir(parents=True, exist_ok=True)
    for i, (rgb, x) in enumerate(zip(seq.rgb_frames, seq.x_frames)):
        imwrite(directory / "visible" / f"{i:06d}.png", rgb)
        imwrite(directory / modality_dir / f"{i:06d}.png", x)
    _write_gt(directory / "groundtruth.txt", seq.gt_rgb)
    if seq.gt_x is not None:
        _write_gt(directory / "groundtruth_sonar.txt", seq.gt_x)


def _write_gt(path, boxes):
    lines = [",".join(f"{v:.2f}" for v in box) for box in boxes]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic sequences
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    frames: int = 100
    image_size: int = 160
    size_px: int = 40
    speed_px: float = 4.0
    noise: float = 8.0
    shape: str = "square"     # or "ellipse"


def _target_mask(spec, cy, cx):
    """Boolean coverage mask of the target at a (possibly fractional) center."""
    half = spec.size_px / 2.0
    ys, xs = np.mgrid[0:spec.image_size, 0:spec.image_size]
    if spec.shape == "ellipse":
        return ((ys - cy) / half) ** 2 + ((xs - cx) / half) ** 2 <= 1.0
    return (np.abs(ys - cy) <= half) & (np.abs(xs - cx) <= half)


def _mask_bbox(mask):
    ys, xs = np.nonzero(mask)
    return np.array([xs.min(), ys.min(), xs.max() - xs.min() + 1,
                     ys.max() - ys.min() + 1], dtype=np.float64)


def _trajectory(spec, rng):
    """Bouncing center path keeping the target fully inside the image."""
    s = spec.image_size
    margin = spec.size_px / 2.0 + 2.0
    cy = rng.uniform(margin, s - margin)
    cx = rng.uniform(margin, s - margin)
    angle = rng.uniform(0, 2 * np.pi)
    vy, vx = spec.speed_px * np.sin(angle), spec.speed_px * np.cos(angle)
    centers = []
    for _ in range(spec.frames):
        centers.append((cy, cx))
        cy, cx = cy + vy, cx + vx
        if not margin <= cy <= s - margin:
            vy = -vy
            cy = float(np.clip(cy, margin, s - margin))
        if not margin <= cx <= s - margin:
            vx = -vx
            cx = float(np.clip(cx, margin, s - margin))
    return centers


def synth_sequence(spec, seed, modality="rgbt"):
    """Deterministic rendered sequence with exact ground truth.

    The X modality inverts the target/background contrast and carries its own
    noise. For rgbs the sonar target follows an independent, spatially
    misaligned trajectory with its own ground-truth track.
    """
    rng = np.random.default_rng(seed)
    s = spec.image_size
    background = rng.uniform(70, 130, size=(s, s))
    texture = rng.uniform(150, 230, size=(s, s))
    path_rgb = _trajectory(spec, rng)
    path_x = _trajectory(spec, rng) if modality == "rgbs" else path_rgb

    rgb_frames, x_frames, gt_rgb, gt_x = [], [], [], []
    for (ry, rx), (xy, xx) in zip(path_rgb, path_x):
        mask_rgb = _target_mask(spec, ry, rx)
        mask_x = mask_rgb if path_x is path_rgb else _target_mask(spec, xy, xx)
        rgb = np.where(mask_rgb, texture, background) \
            + rng.normal(0, spec.noise, size=(s, s))
        x_mod = (255.0 - np.where(mask_x, texture, background)) \
            + rng.normal(0, spec.noise, size=(s, s))
        rgb_frames.append(np.repeat(np.clip(rgb, 0, 255)[:, :, None],
                                    3, axis=2).astype(np.uint8))
        x_frames.append(np.repeat(np.clip(x_mod, 0, 255)[:, :, None],
                                  3, axis=2).astype(np.uint8))
        gt_rgb.append(_mask_bbox(mask_rgb))
        gt_x.append(_mask_bbox(mask_x))
    return SequencePair(name=f"synth{seed}", rgb_frames=rgb_frames,
                        x_frames=x_frames, gt_rgb=np.asarray(gt_rgb),
                        gt_x=np.asarray(gt_x) if modality == "rgbs" else None,
                        modality=modality)
