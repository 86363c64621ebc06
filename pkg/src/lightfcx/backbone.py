"""Stub feature extractor: stride-16, 160-channel output contract.

Four stages of 3x3 stride-2 conv + batchnorm + relu with widths 32/64/128/160.
The architecture is deliberately minimal; downstream modules only depend on the
output contract (channels=160, spatial = input/16), which this enforces up
front. RGB and X modality share one instance by default; per-modality copies
are a config switch.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import BatchNorm2d, Conv2d, Module

OUT_CHANNELS = 160
STRIDE = 16
DEFAULT_WIDTHS = (32, 64, 128, 160)


class StubBackbone(Module):
    def __init__(self, store, name, rng, widths=DEFAULT_WIDTHS,
                 mean=0.5, std=0.5):
        super().__init__()
        if widths[-1] != OUT_CHANNELS:
            raise ContractError(f"backbone must end at {OUT_CHANNELS} channels, "
                                f"got widths {tuple(widths)}")
        if len(widths) != 4:
            raise ContractError(f"backbone needs 4 stride-2 stages for stride {STRIDE}, "
                                f"got {len(widths)} widths")
        self.mean, self.std = float(mean), float(std)
        self.convs, self.bns = [], []
        c_prev = 3
        for i, c in enumerate(widths):
            self.convs.append(self.add(Conv2d(store, f"{name}.stage{i}.conv",
                                              c_prev, c, k=3, stride=2, rng=rng)))
            self.bns.append(self.add(BatchNorm2d(store, f"{name}.stage{i}.bn", c)))
            c_prev = c
        self.widths = tuple(widths)

    def normalize(self, image):
        """uint8/float (3, H, W) or (N, 3, H, W) pixels -> standardized float64."""
        arr = np.asarray(image, dtype=np.float64)
        if arr.max() > 1.5:  # raw 0..255 pixels
            arr = arr / 255.0
        return (arr - self.mean) / self.std

    def __call__(self, x):
        """Batched forward on a (N, 3, H, W) tensor of standardized pixels."""
        h, w = x.shape[2], x.shape[3]
        if h % STRIDE or w % STRIDE:
            raise ContractError(f"input size {h}x{w} not divisible by stride {STRIDE}")
        out = x
        for conv, bn in zip(self.convs, self.bns):
            out = T.relu(bn(conv(out)))
        return out

    def extract(self, image):
        """Single image (3, H, W) of raw pixels -> feature map (160, H/16, W/16)."""
        arr = self.normalize(image)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ContractError(f"extract expects (3, H, W) image, got {arr.shape}")
        out = self(T.Tensor(arr[None]))
        return T.reshape(out, out.shape[1:])

    def macs(self, h, w):
        total = 0
        for i, conv in enumerate(self.convs):
            h, w = h // 2, w // 2
            total += conv.macs(h, w)
        return total
