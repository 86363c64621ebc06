"""Two-phase desk-scale training.

Phase 1 trains the full spatial model (no template aggregation) with a
decoupled-weight-decay adaptive optimizer: lr 2e-4, weight decay 1e-4,
betas (0.9, 0.999), eps 1e-8, and a single x0.1 step decay at the configured
epoch. Phase 2 freezes everything except ``stam.*`` and finetunes only the
aggregation module; frozen submodules run in eval mode, so their batch-norm
buffers stay byte-identical too, and the constant backbone features are
precomputed once per pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .crops import crop_around_box, to_chw
from .errors import ContractError
from .losses import encode_targets, total_loss


class AdamW:
    """Adaptive moments with decoupled weight decay over a ParamStore."""

    def __init__(self, store, cfg: TrainConfig):
        self.store = store
        self.cfg = cfg
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, lr=None):
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in self.store.trainable():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.data -= lr * (update + cfg.weight_decay * p.data)


def lr_at_epoch(cfg: TrainConfig, epoch):
    """Step decay: base lr until the decay epoch, then x decay_factor."""
    return cfg.lr * (cfg.decay_factor if epoch >= cfg.decay_epoch else 1.0)


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------

@dataclass
class TrainingPair:
    z_rgb: np.ndarray            # raw template crop pixels (3, Hz, Wz)
    z_x: np.ndarray
    x_rgb: np.ndarray            # raw search crop pixels (3, Hx, Wx)
    x_x: np.ndarray
    box_rgb: np.ndarray          # gt (cx, cy, w, h) normalized to the rgb crop
    box_x: np.ndarray
    zd_rgb: np.ndarray = None    # dynamic-template crops (phase 2 only)
    zd_x: np.ndarray = None


def draw_frame_indices(n, rng, max_gap, with_dynamic=False):
    """(template, dynamic, search) frame indices; dynamic lies between the
    other two. All indices always fall inside [0, n)."""
    idx_t = int(rng.integers(0, n))
    idx_s = min(idx_t + int(rng.integers(0, max_gap + 1)), n - 1)
    idx_d = int(rng.integers(idx_t, idx_s + 1)) if with_dynamic else None
    return idx_t, idx_d, idx_s


def sample_pair(seq, rng, config, train_cfg=TrainConfig(), with_dynamic=False):
    """Draw a (template, search) pair from a sequence.

    The search frame follows the template frame within the max-gap window and
    its crop center is jittered so the target is not always centered. Phase-2
    sampling draws the dynamic-template frame between the two.
    """
    idx_t, idx_d, idx_s = draw_frame_indices(len(seq), rng,
                                             train_cfg.max_frame_gap,
                                             with_dynamic)
    rgbs = seq.modality == "rgbs"

    def build(frames, gt, jit_unit, scale):
        z_crop, _ = crop_around_box(frames[idx_t], gt[idx_t],
                                    config.template_context, config.template_size)
        side = config.search_context * np.sqrt(gt[idx_s][2] * gt[idx_s][3]) * scale
        x_crop, geom = crop_around_box(frames[idx_s], gt[idx_s],
                                       config.search_context, config.search_size,
                                       jitter_xy=tuple(jit_unit * side),
                                       scale=scale)
        box = geom.box_to_crop_norm(gt[idx_s])
        zd_crop = None
        if with_dynamic:
            zd_crop, _ = crop_around_box(frames[idx_d], gt[idx_d],
                                         config.template_context,
                                         config.template_size)
        return to_chw(z_crop), to_chw(x_crop), box, \
            to_chw(zd_crop) if zd_crop is not None else None

    jit = rng.uniform(-train_cfg.jitter_frac, train_cfg.jitter_frac, 2)
    # scale jitter varies the target's relative size so the size branch
    # reads the image instead of memorizing the fixed crop ratio
    scale = float(np.exp(rng.uniform(-train_cfg.scale_jitter,
                                     train_cfg.scale_jitter)))
    if rgbs:
        jit_x = rng.uniform(-train_cfg.jitter_frac, train_cfg.jitter_frac, 2)
        scale_x = float(np.exp(rng.uniform(-train_cfg.scale_jitter,
                                           train_cfg.scale_jitter)))
        z_r, x_r, box_r, zd_r = build(seq.rgb_frames, seq.gt_rgb, jit, scale)
        z_x, x_x, box_x, zd_x = build(seq.x_frames, seq.gt_x, jit_x, scale_x)
    else:
        # aligned modalities share the crop geometry, including the jitter
        z_r, x_r, box_r, zd_r = build(seq.rgb_frames, seq.gt_rgb, jit, scale)
        z_x, x_x, box_x, zd_x = build(seq.x_frames, seq.gt_rgb, jit, scale)
    return TrainingPair(z_rgb=z_r, z_x=z_x, x_rgb=x_r, x_x=x_x,
                        box_rgb=box_r, box_x=box_x, zd_rgb=zd_r, zd_x=zd_x),\
        (idx_t, idx_d, idx_s)


def build_pairs(seq, count, seed, config, train_cfg=TrainConfig(),
                with_dynamic=False):
    rng = np.random.default_rng(seed)
    return [sample_pair(seq, rng, config, train_cfg, with_dynamic)[0]
            for _ in range(count)]


# ---------------------------------------------------------------------------
# batched loss
# ---------------------------------------------------------------------------

def _stack(net, arrays):
    return T.Tensor(net.backbone.normalize(np.stack(arrays)))


def _batch_loss(net, batch, use_stam):
    cells = net.config.search_cells
    z_r = net.features(_stack(net, [p.z_rgb for p in batch]), "rgb")
    z_x = net.features(_stack(net, [p.z_x for p in batch]), "x")
    x_r = net.features(_stack(net, [p.x_rgb for p in batch]), "rgb")
    x_x = net.features(_stack(net, [p.x_x for p in batch]), "x")
    zd_r = zd_x = None
    if use_stam:
        zd_r = net.features(_stack(net, [p.zd_rgb for p in batch]), "rgb")
        zd_x = net.features(_stack(net, [p.zd_x for p in batch]), "x")
    out = net.forward(z_r, z_x, x_r, x_x, zd_r, zd_x, use_stam=use_stam)
    if net.config.variant == "rgbs":
        out_r, out_x = out
        t_r = [encode_targets(p.box_rgb, cells, cells) for p in batch]
        t_x = [encode_targets(p.box_x, cells, cells) for p in batch]
        loss_r, parts_r = total_loss(out_r, t_r)
        loss_x, parts_x = total_loss(out_x, t_x)
        parts = {k: parts_r[k] + parts_x[k] for k in parts_r}
        return T.add(loss_r, loss_x), parts
    targets = [encode_targets(p.box_rgb, cells, cells) for p in batch]
    return total_loss(out, targets)


def _draw_batch(pairs, rng, batch_size):
    """pairs: a fixed list, or a callable (rng, n) -> fresh TrainingPairs."""
    if callable(pairs):
        return pairs(rng, batch_size)
    idx = rng.integers(0, len(pairs), size=min(batch_size, len(pairs)))
    return [pairs[i] for i in idx]


def pair_sampler(sequences, config, train_cfg=TrainConfig(), with_dynamic=False):
    """Fresh-crop batch generator over one or more sequences."""
    seqs = sequences if isinstance(sequences, (list, tuple)) else [sequences]

    def make(rng, n):
        return [sample_pair(seqs[rng.integers(0, len(seqs))], rng, config,
                            train_cfg, with_dynamic)[0] for _ in range(n)]

    return make


# ---------------------------------------------------------------------------
# training phases
# ---------------------------------------------------------------------------

def recalibrate_bn(net, pairs, train_cfg=TrainConfig(), passes=3, seed=0):
    """Precise-BN: reset running stats to the mean batch statistics.

    Small batches make the momentum-tracked running stats drift from the
    statistics the weights were actually trained under; replaying the data
    with a 1/t momentum schedule replaces them with the exact average.
    """
    from .layers import BatchNorm2d
    bns = [m for m in net.modules() if isinstance(m, BatchNorm2d)]
    net.train()
    rng = np.random.default_rng(seed)
    if callable(pairs):
        pairs = pairs(rng, 8 * train_cfg.batch_size)
    t = 0
    for _ in range(passes):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), train_cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + train_cfg.batch_size]]
            t += 1
            for bn in bns:
                bn.momentum = 1.0 / t
            _batch_loss(net, batch, use_stam=False)
    for bn in bns:
        bn.momentum = 0.1
    net.eval()


def train_phase1(net, pairs, steps, train_cfg=TrainConfig(), seed=0,
                 log=None, polish_frac=0.3):
    """Train the full spatial model (template aggregation off).

    Small batches make batch-stat normalization leak batch information, so
    eval-mode outputs would lag the train-mode ones. The last `polish_frac`
    of the steps therefore run with batch-norm statistics frozen at their
    precise (replayed-average) values, so the weights converge under exactly
    the normalization used at inference.
    """
    if not callable(pairs) and not pairs:
        raise ContractError("training dataset is empty")
    net.train()
    net.store.unfreeze_all()
    opt = AdamW(net.store, train_cfg)
    rng = np.random.default_rng(seed)
    switch_at = steps - int(steps * polish_frac) if steps > 0 else 0
    history = []
    for step in range(steps):
        if step == switch_at and polish_frac > 0:
            recalibrate_bn(net, pairs, train_cfg, seed=seed)
            net.eval()  # freeze stats; weights keep training below
        batch = _draw_batch(pairs, rng, train_cfg.batch_size)
        loss, parts = _batch_loss(net, batch, use_stam=False)
        net.store.zero_grad()
        loss.backward()
        opt.step(lr_at_epoch(train_cfg, step // train_cfg.steps_per_epoch))
        history.append(parts["total"])
        if log is not None and (step % 25 == 0 or step == steps - 1):
            log(step, parts)
    net.eval()
    return history


def _precompute_phase2_features(net, pairs):
    """Backbone outputs are constant while it is frozen in eval mode."""
    cached = []
    for p in pairs:
        cached.append({
            "z_r": net.features(_stack(net, [p.z_rgb]), "rgb").data[0],
            "z_x": net.features(_stack(net, [p.z_x]), "x").data[0],
            "x_r": net.features(_stack(net, [p.x_rgb]), "rgb").data[0],
            "x_x": net.features(_stack(net, [p.x_x]), "x").data[0],
            "zd_r": net.features(_stack(net, [p.zd_rgb]), "rgb").data[0],
            "zd_x": net.features(_stack(net, [p.zd_x]), "x").data[0],
        })
    return cached


def train_phase2_stam(net, pairs, steps, train_cfg=TrainConfig(), seed=0,
                      log=None):
    """Finetune only ``stam.*`` on top of a phase-1 model.

    Everything else is frozen (no gradients, no optimizer updates) and runs
    in eval mode, so every non-stam parameter and buffer stays byte-identical.
    """
    if not pairs:
        raise ContractError("training dataset is empty")
    if net.stam_rgb is None or not net.store.names("stam."):
        raise ContractError("phase 2 needs a model with stam.* parameters")
    if any(p.zd_rgb is None for p in pairs):
        raise ContractError("phase-2 pairs need dynamic-template crops")
    net.eval()
    net.store.freeze_all_except("stam.")
    cells = net.config.search_cells
    cache = _precompute_phase2_features(net, pairs)
    opt = AdamW(net.store, train_cfg)
    rng = np.random.default_rng(seed)
    history = []
    for step in range(steps):
        idx = rng.integers(0, len(pairs), size=min(train_cfg.batch_size, len(pairs)))
        feats = {k: T.Tensor(np.stack([cache[i][k] for i in idx]))
                 for k in cache[0]}
        z_rt = net.stam_rgb(feats["z_r"], feats["zd_r"])
        z_xt = net.stam_x(feats["z_x"], feats["zd_x"])
        out = net.forward_features(z_rt, z_xt, feats["x_r"], feats["x_x"])
        if net.config.variant == "rgbs":
            t_r = [encode_targets(pairs[i].box_rgb, cells, cells) for i in idx]
            t_x = [encode_targets(pairs[i].box_x, cells, cells) for i in idx]
            loss_r, parts = total_loss(out[0], t_r)
            loss_x, _ = total_loss(out[1], t_x)
            loss = T.add(loss_r, loss_x)
            parts = dict(parts, total=loss.item())
        else:
            targets = [encode_targets(pairs[i].box_rgb, cells, cells) for i in idx]
            loss, parts = total_loss(out, targets)
        net.store.zero_grad()
        loss.backward()
        opt.step(lr_at_epoch(train_cfg, step // train_cfg.steps_per_epoch))
        history.append(parts["total"])
        if log is not None and (step % 25 == 0 or step == steps - 1):
            log(step, parts)
    net.store.unfreeze_all()
    return history
