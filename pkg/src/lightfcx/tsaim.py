"""Template-search interaction: similarity map plus refinement to 96 channels.

`similarity` forms the transpose-product between template and search tokens
(every template cell dotted with every search cell across the 160 channels).
`refine` turns that into a per-search-cell message by softmax-weighting the
template tokens (scale 1/sqrt(160)), concatenates the message with the search
features and runs a small conv stack down to the 96-channel integrated
feature. One parameter set per modality lives under `tsaim.rgb.*` /
`tsaim.x.*`.
"""

from __future__ import annotations

import math

from . import tensor as T
from .errors import ShapeError
from .layers import (BatchNorm2d, Conv2d, DWConv2d, Module, map_to_tokens,
                     tokens_to_map)

IN_CHANNELS = 160
OUT_CHANNELS = 96


def similarity(z, x):
    """(N,160,hz,wz) x (N,160,hx,wx) -> (N, hz*wz, hx*wx) dot-product map."""
    if z.shape[1] != IN_CHANNELS or x.shape[1] != IN_CHANNELS:
        raise ShapeError(f"similarity expects {IN_CHANNELS} channels, got "
                         f"{z.shape} and {x.shape}")
    zt = map_to_tokens(z)                       # (N, Tz, C)
    xt = map_to_tokens(x)                       # (N, Tx, C)
    return T.bmm(zt, T.transpose(xt, (0, 2, 1)))


def attention_weights(a):
    """Column softmax of the scaled similarity: weights over template cells."""
    return T.softmax(T.mul(a, 1.0 / math.sqrt(IN_CHANNELS)), axis=1)


class TsaimRefine(Module):
    def __init__(self, store, name, rng):
        super().__init__()
        self.proj = self.add(Conv2d(store, f"{name}.proj", 2 * IN_CHANNELS,
                                    OUT_CHANNELS, k=1, rng=rng))
        self.bn = self.add(BatchNorm2d(store, f"{name}.bn", OUT_CHANNELS))
        self.dw = self.add(DWConv2d(store, f"{name}.dw", OUT_CHANNELS, k=3, rng=rng))
        self.out = self.add(Conv2d(store, f"{name}.out", OUT_CHANNELS,
                                   OUT_CHANNELS, k=1, rng=rng))

    def __call__(self, a, x, z):
        """Similarity (N,Tz,Tx), search (N,160,hx,wx), template (N,160,hz,wz)."""
        n, c, hx, wx = x.shape
        tz, tx = z.shape[2] * z.shape[3], hx * wx
        if a.shape != (n, tz, tx):
            raise ShapeError(f"similarity shape {a.shape} does not match "
                             f"template {z.shape} / search {x.shape}")
        weights = attention_weights(a)                        # (N, Tz, Tx)
        zt = map_to_tokens(z)                                 # (N, Tz, C)
        message = T.bmm(T.transpose(weights, (0, 2, 1)), zt)  # (N, Tx, C)
        message = tokens_to_map(message, hx, wx)
        cat = T.concat([x, message], axis=1)                  # (N, 320, hx, wx)
        p = self.proj(cat)
        y = self.out(self.dw(T.relu(self.bn(p))))
        return T.add(y, p)

    def macs(self, hz, wz, hx, wx):
        attn = 2 * (hz * wz) * (hx * wx) * IN_CHANNELS  # similarity + message
        return (attn + self.proj.macs(hx, wx) + self.dw.macs(hx, wx)
                + self.out.macs(hx, wx))


class Tsaim(Module):
    """Full per-modality interaction: similarity then refinement."""

    def __init__(self, store, name, rng):
        super().__init__()
        self.refine = self.add(TsaimRefine(store, name, rng))

    def __call__(self, z, x):
        return self.refine(similarity(z, x), x, z)

    def macs(self, hz, wz, hx, wx):
        return self.refine.macs(hz, wz, hx, wx)
