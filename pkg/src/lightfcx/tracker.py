"""End-to-end tracking pipeline.

init() crops the first-frame templates (context 2.0, resized to the template
size) and stores their backbone features as both the fixed and the dynamic
template. track() crops the search area around the previous box (context 4.0),
runs backbone -> template aggregation -> interaction -> fusion -> head, blends
the cls map with a cosine window, decodes the argmax cell and maps the box
back to frame pixels. The dynamic template refreshes only when both the frame
interval and the confidence threshold are met; the fixed template never
changes. Confidence is the raw sigmoid cls value at the argmax, taken before
the window so the spatial prior cannot distort the update rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import clip_to_image
from .crops import crop_around_box, to_chw
from .errors import ContractError
from .model import TrackerNet


@dataclass
class TemplateState:
    fixed: np.ndarray            # (160, hz, wz) backbone features, immutable
    dynamic: np.ndarray          # replaced by template updates
    last_update_frame: int = 0


@dataclass
class TrackState:
    boxes: dict                  # modality -> (x, y, w, h) frame pixels
    templates: dict              # modality -> TemplateState
    frame_index: int = 0
    last_confidence: dict = field(default_factory=dict)


def should_update(frame_index, last_update_frame, confidence, config):
    """The template update rule: both interval and confidence must hold."""
    return (frame_index - last_update_frame >= config.update_interval
            and confidence >= config.update_conf_threshold)


def cosine_window(h, w):
    return np.outer(np.hanning(h), np.hanning(w))


class Tracker:
    def __init__(self, net: TrackerNet):
        self.net = net.eval()
        self.config = net.config
        cells = self.config.search_cells
        self.window = cosine_window(cells, cells)
        self._modalities = ("rgb", "x")

    # -- template handling ---------------------------------------------------

    def _template_features(self, frame, box, modality):
        crop, _ = crop_around_box(frame, box, self.config.template_context,
                                  self.config.template_size)
        feat = self.net.features(
            self.net.backbone.normalize(to_chw(crop))[None], modality)
        return feat.data[0]

    def init(self, frames, boxes):
        """First frame: frames/boxes keyed by modality ('rgb', 'x').

        Single-box variants take one shared box under 'rgb'; rgbs takes an
        independent 'x' box for the sonar frame.
        """
        rgbs = self.config.variant == "rgbs"
        if rgbs and "x" not in boxes:
            raise ContractError("rgbs tracking needs an independent sonar box")
        box_rgb = np.asarray(boxes["rgb"], dtype=np.float64)
        box_x = np.asarray(boxes["x"] if rgbs else boxes["rgb"], dtype=np.float64)
        state_boxes = {"rgb": box_rgb, "x": box_x}
        templates = {}
        for m in self._modalities:
            frame = frames[m]
            h, w = frame.shape[:2]
            b = state_boxes[m]
            if not (0 <= b[0] < w and 0 <= b[1] < h):
                raise ContractError(f"{m} box {b.tolist()} outside {w}x{h} frame")
            feat = self._template_features(frame, b, m)
            templates[m] = TemplateState(fixed=feat, dynamic=feat.copy())
        return TrackState(boxes=state_boxes, templates=templates)

    # -- per-frame tracking ----------------------------------------------------

    def _decode(self, head_out, geometry, frame_shape):
        cells = self.config.search_cells
        cls = head_out.cls.data[0, 0]
        score = (1.0 - self.config.window_influence) * cls \
            + self.config.window_influence * self.window
        iy, ix = np.unravel_index(np.argmax(score), score.shape)
        confidence = float(cls[iy, ix])
        off = head_out.offset.data[0, :, iy, ix]
        size = head_out.size.data[0, :, iy, ix]
        box_norm = np.array([(ix + off[0]) / cells, (iy + off[1]) / cells,
                             size[0], size[1]])
        box = geometry.box_to_frame(box_norm)
        h, w = frame_shape[:2]
        return clip_to_image(box, w, h), confidence

    def track(self, frames, state):
        """One frame pair -> (boxes dict, confidences dict); state geometry
        is read but only boxes/confidence fields are advanced."""
        if state.frame_index < 0 or not state.templates:
            raise ContractError("track() called on an uninitialized state")
        state.frame_index += 1
        crops, geoms = {}, {}
        for m in self._modalities:
            crop, geom = crop_around_box(frames[m], state.boxes[m],
                                         self.config.search_context,
                                         self.config.search_size)
            crops[m] = self.net.backbone.normalize(to_chw(crop))[None]
            geoms[m] = geom
        x_r = self.net.features(crops["rgb"], "rgb")
        x_x = self.net.features(crops["x"], "x")
        z = {m: (T.Tensor(state.templates[m].fixed[None]),
                 T.Tensor(state.templates[m].dynamic[None]))
             for m in self._modalities}
        z_rt = self.net.aggregate_template(z["rgb"][0], z["rgb"][1], "rgb")
        z_xt = self.net.aggregate_template(z["x"][0], z["x"][1], "x")
        out = self.net.forward_features(z_rt, z_xt, x_r, x_x)
        if self.config.variant == "rgbs":
            out_r, out_x = out
            box_r, conf_r = self._decode(out_r, geoms["rgb"], frames["rgb"].shape)
            box_x, conf_x = self._decode(out_x, geoms["x"], frames["x"].shape)
            boxes = {"rgb": self._smooth_size(state.boxes["rgb"], box_r,
                                              frames["rgb"].shape),
                     "x": self._smooth_size(state.boxes["x"], box_x,
                                            frames["x"].shape)}
            confs = {"rgb": conf_r, "x": conf_x}
        else:
            box, conf = self._decode(out, geoms["rgb"], frames["rgb"].shape)
            box = self._smooth_size(state.boxes["rgb"], box, frames["rgb"].shape)
            boxes = {"rgb": box, "x": box.copy()}
            confs = {"rgb": conf, "x": conf}
        state.boxes = boxes
        state.last_confidence = confs
        return boxes, confs

    def _smooth_size(self, prev_box, new_box, frame_shape):
        """Damp frame-to-frame size changes so one noisy size estimate cannot
        run the crop geometry away (the center is taken as predicted)."""
        lr = self.config.size_lr
        w = (1.0 - lr) * prev_box[2] + lr * new_box[2]
        h = (1.0 - lr) * prev_box[3] + lr * new_box[3]
        cx, cy = new_box[0] + new_box[2] / 2.0, new_box[1] + new_box[3] / 2.0
        fh, fw = frame_shape[:2]
        return clip_to_image(np.array([cx - w / 2.0, cy - h / 2.0, w, h]), fw, fh)

    def maybe_update_template(self, state, frames, confidences):
        """Refresh dynamic templates when interval and confidence both hold."""
        for m in self._modalities:
            tpl = state.templates[m]
            if should_update(state.frame_index, tpl.last_update_frame,
                             confidences[m], self.config):
                tpl.dynamic = self._template_features(frames[m], state.boxes[m], m)
                tpl.last_update_frame = state.frame_index

    def step(self, frames, state):
        boxes, confs = self.track(frames, state)
        self.maybe_update_template(state, frames, confs)
        return boxes, confs


def track_sequence(tracker, seq, progress=None):
    """Run one-pass tracking over a SequencePair; returns boxes + confidences.

    Initializes on frame 0 ground truth and never re-initializes.
    """
    frames0 = {"rgb": seq.rgb_frames[0], "x": seq.x_frames[0]}
    boxes0 = {"rgb": seq.gt_rgb[0]}
    if tracker.config.variant == "rgbs":
        boxes0["x"] = seq.gt_x[0]
    state = tracker.init(frames0, boxes0)
    rgbs = tracker.config.variant == "rgbs"
    results = [np.concatenate([boxes0["rgb"], boxes0["x"]])
               if rgbs else np.asarray(boxes0["rgb"], dtype=np.float64)]
    confidences = [1.0]
    for i in range(1, len(seq)):
        frames = {"rgb": seq.rgb_frames[i], "x": seq.x_frames[i]}
        boxes, confs = tracker.step(frames, state)
        results.append(np.concatenate([boxes["rgb"], boxes["x"]])
                       if rgbs else boxes["rgb"])
        confidences.append(confs["rgb"])
        if progress is not None:
            progress(i)
    return np.asarray(results), np.asarray(confidences)


def save_results(path, results):
    lines = [",".join(f"{v:.3f}" for v in row) for row in np.atleast_2d(results)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_confidences(path, confidences):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(f"{v:.6f}" for v in confidences) + "\n")
