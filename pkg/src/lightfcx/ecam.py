"""Efficient cross-attention module: cross-modal attention + joint encoding.

The attention stage is parameter-free: queries, keys and values are the raw
tokens of the two inputs (single head, scale 1/sqrt(C)), with the value taken
from the query's own modality. Learned parameters sit only in the per-branch
1x1 projection + layer norm that close the attention stage and in the joint
feature encoding (JFE) conv stack. Blocks can be stacked 1..4 deep; block k's
parameters live under ``ecam.<k>.attn.*`` and ``ecam.<k>.jfe.*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import (BatchNorm2d, Conv2d, DWConv2d, LayerNorm, Linear, Module,
                     map_to_tokens, tokens_to_map)

CHANNELS = 96
KERNELS = (3, 5, 7)
MAX_STACK = 4


class CrossAttention(Module):
    """Parameter-free cross attention between two token sets, then per-branch
    residual projection + layer norm. Also reused by the template aggregator
    (same construction at 160 channels)."""

    def __init__(self, store, name, channels, branches=("rgb", "x"), rng=None,
                 tie=False):
        super().__init__()
        self.channels = channels
        self.scale = 1.0 / math.sqrt(channels)
        self.branch_names = branches
        self.proj_a = self.add(Linear(store, f"{name}.{branches[0]}.proj",
                                      channels, channels, rng=rng))
        self.norm_a = self.add(LayerNorm(store, f"{name}.{branches[0]}.norm", channels))
        if tie:
            self.proj_b, self.norm_b = self.proj_a, self.norm_a
        else:
            self.proj_b = self.add(Linear(store, f"{name}.{branches[1]}.proj",
                                          channels, channels, rng=rng))
            self.norm_b = self.add(LayerNorm(store, f"{name}.{branches[1]}.norm",
                                             channels))

    def scores(self, q, k):
        """Scaled token-similarity logits softmaxed over the key axis."""
        return T.softmax(T.mul(T.bmm(q, T.transpose(k, (0, 2, 1))), self.scale),
                         axis=-1)

    def __call__(self, a, b):
        """Tokens (N, T, C) x (N, T, C) -> refined tokens for both branches."""
        if a.shape != b.shape:
            raise ShapeError(f"cross attention token sets differ: {a.shape} vs {b.shape}")
        if a.shape[-1] != self.channels:
            raise ShapeError(f"cross attention expects {self.channels} channels, "
                             f"got {a.shape}")
        a_crs = T.bmm(self.scores(a, b), a)   # values from the query's modality
        b_crs = T.bmm(self.scores(b, a), b)
        a_out = self.norm_a(T.add(a, self.proj_a(T.add(a, a_crs))))
        b_out = self.norm_b(T.add(b, self.proj_b(T.add(b, b_crs))))
        return a_out, b_out

    def macs(self, tokens):
        attn = 2 * 2 * tokens * tokens * self.channels  # scores + weighted sum, both ways
        return attn + 2 * self.channels * self.channels * tokens


class JointFeatureEncoding(Module):
    """Conv encoding: 1x1 down, parallel depthwise 3/5/7 sum, ReLU + 1x1 + BN,
    plus a bias-free 1x1 projection of the block input, then BN."""

    def __init__(self, store, name, in_channels, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.down = self.add(Conv2d(store, f"{name}.down", in_channels, CHANNELS,
                                    k=1, rng=rng))
        self.dws = [self.add(DWConv2d(store, f"{name}.dw{k}", CHANNELS, k=k, rng=rng))
                    for k in KERNELS]
        self.mix = self.add(Conv2d(store, f"{name}.mix", CHANNELS, CHANNELS,
                                   k=1, rng=rng))
        self.bn_mix = self.add(BatchNorm2d(store, f"{name}.bn_mix", CHANNELS))
        self.proj = self.add(Conv2d(store, f"{name}.proj", in_channels, CHANNELS,
                                    k=1, bias=False, rng=rng))
        self.bn_out = self.add(BatchNorm2d(store, f"{name}.bn_out", CHANNELS))

    def __call__(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"JFE expects {self.in_channels} channels, got {x.shape}")
        d = self.down(x)
        space = self.dws[0](d)
        for dw in self.dws[1:]:
            space = T.add(space, dw(d))
        act = self.bn_mix(self.mix(T.relu(space)))
        return self.bn_out(T.add(act, self.proj(x)))

    def macs(self, h, w):
        return (self.down.macs(h, w) + sum(dw.macs(h, w) for dw in self.dws)
                + self.mix.macs(h, w) + self.proj.macs(h, w))


@dataclass
class EcamOutput:
    fused: object = None
    rgb_out: object = None
    x_out: object = None


class EcamBlock(Module):
    def __init__(self, store, name, variant, rng):
        super().__init__()
        self.variant = variant
        self.attn = self.add(CrossAttention(store, f"{name}.attn", CHANNELS, rng=rng))
        if variant == "fused":
            self.jfe = self.add(JointFeatureEncoding(store, f"{name}.jfe",
                                                     2 * CHANNELS, rng=rng))
        else:
            self.jfe_rgb = self.add(JointFeatureEncoding(store, f"{name}.jfe.rgb",
                                                         CHANNELS, rng=rng))
            self.jfe_x = self.add(JointFeatureEncoding(store, f"{name}.jfe.x",
                                                       CHANNELS, rng=rng))

    def __call__(self, x_r, x_x):
        n, c, h, w = x_r.shape
        if x_x.shape != x_r.shape:
            raise ShapeError(f"ECAM inputs differ: {x_r.shape} vs {x_x.shape}")
        if c != CHANNELS:
            raise ShapeError(f"ECAM expects {CHANNELS} channels, got {x_r.shape}")
        r_eca, x_eca = self.attn(map_to_tokens(x_r), map_to_tokens(x_x))
        r_map = tokens_to_map(r_eca, h, w)
        x_map = tokens_to_map(x_eca, h, w)
        if self.variant == "fused":
            return EcamOutput(fused=self.jfe(T.concat([r_map, x_map], axis=1)))
        return EcamOutput(rgb_out=self.jfe_rgb(r_map), x_out=self.jfe_x(x_map))

    def macs(self, h, w):
        total = self.attn.macs(h * w)
        if self.variant == "fused":
            return total + self.jfe.macs(h, w)
        return total + self.jfe_rgb.macs(h, w) + self.jfe_x.macs(h, w)


class EcamStack(Module):
    """Depth-N chain of ECAM blocks. In fused mode the single output of block
    k feeds both inputs of block k+1; in split mode the two outputs feed
    through one-to-one."""

    def __init__(self, store, name, variant="fused", depth=1, rng=None):
        super().__init__()
        if variant not in ("fused", "split"):
            raise ConfigError(f"unknown ECAM variant {variant!r}")
        if not 1 <= depth <= MAX_STACK:
            raise ConfigError(f"ECAM stack depth must be in [1, {MAX_STACK}], got {depth}")
        self.variant = variant
        self.depth = depth
        self.blocks = [self.add(EcamBlock(store, f"{name}.{k}", variant, rng))
                       for k in range(depth)]

    def __call__(self, x_r, x_x):
        out = None
        for block in self.blocks:
            out = block(x_r, x_x)
            if self.variant == "fused":
                x_r = x_x = out.fused
            else:
                x_r, x_x = out.rgb_out, out.x_out
        return out

    def macs(self, h, w):
        return sum(b.macs(h, w) for b in self.blocks)
