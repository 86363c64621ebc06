"""Spatiotemporal template aggregation.

Fuses the fixed first-frame template with the dynamic template gathered during
tracking: the shared lightweight cross-attention construction (160-channel
tokens, scale 1/sqrt(160)), an independent spatial/channel refinement per
template branch, and a joint per-token linear transform with layer norm. The
whole module is a pure function of (fixed, dynamic, parameters); its exact
parameter prefix (``stam.rgb.*`` / ``stam.x.*``) is what stays trainable in
the second training phase.
"""

from __future__ import annotations

from . import tensor as T
from .errors import ShapeError
from .ecam import CrossAttention
from .layers import (Conv2d, DWConv2d, LayerNorm, Linear, Module,
                     map_to_tokens, tokens_to_map)

CHANNELS = 160
EXPANSION = 2


class TemplateRefine(Module):
    """DW3x3 residual for local structure, then an expand/GELU/contract
    channel bottleneck with residual."""

    def __init__(self, store, name, rng):
        super().__init__()
        self.dw = self.add(DWConv2d(store, f"{name}.dw", CHANNELS, k=3, rng=rng))
        self.up = self.add(Conv2d(store, f"{name}.up", CHANNELS,
                                  EXPANSION * CHANNELS, k=1, rng=rng))
        self.down = self.add(Conv2d(store, f"{name}.down", EXPANSION * CHANNELS,
                                    CHANNELS, k=1, rng=rng))

    def __call__(self, z):
        zs = T.add(self.dw(z), z)
        zc = T.add(self.down(T.gelu(self.up(zs))), zs)
        return zc

    def macs(self, h, w):
        return self.dw.macs(h, w) + self.up.macs(h, w) + self.down.macs(h, w)


class Stam(Module):
    def __init__(self, store, name, rng, tie_branches=False):
        super().__init__()
        self.attn = self.add(CrossAttention(store, f"{name}.attn", CHANNELS,
                                            branches=("fixed", "dyn"), rng=rng,
                                            tie=tie_branches))
        self.refine_fixed = self.add(TemplateRefine(store, f"{name}.refine.fixed", rng))
        if tie_branches:
            self.refine_dyn = self.refine_fixed
        else:
            self.refine_dyn = self.add(TemplateRefine(store, f"{name}.refine.dyn", rng))
        self.tied = tie_branches
        self.linear = self.add(Linear(store, f"{name}.joint.linear",
                                      CHANNELS, CHANNELS, rng=rng))
        self.norm = self.add(LayerNorm(store, f"{name}.joint.norm", CHANNELS))

    def __call__(self, z_fixed, z_dyn):
        """(N,160,h,w) fixed + dynamic templates -> aggregated (N,160,h,w)."""
        if z_fixed.shape != z_dyn.shape:
            raise ShapeError(f"template shapes differ: {z_fixed.shape} vs {z_dyn.shape}")
        if z_fixed.shape[1] != CHANNELS:
            raise ShapeError(f"templates must have {CHANNELS} channels, got "
                             f"{z_fixed.shape}")
        n, c, h, w = z_fixed.shape
        f_tok, d_tok = self.attn(map_to_tokens(z_fixed), map_to_tokens(z_dyn))
        zf = self.refine_fixed(tokens_to_map(f_tok, h, w))
        zd = self.refine_dyn(tokens_to_map(d_tok, h, w))
        s = map_to_tokens(T.add(zf, zd))
        out = self.norm(T.add(self.linear(s), s))
        return tokens_to_map(out, h, w)

    def macs(self, h, w):
        tokens = h * w
        total = self.attn.macs(tokens)
        total += self.refine_fixed.macs(h, w)
        if not self.tied:
            total += self.refine_dyn.macs(h, w)
        total += self.linear.macs(tokens)
        return total
