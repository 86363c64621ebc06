"""Rep-center prediction head.

A stem conv reduces the fusion feature to 96 channels; three branches (cls,
offset, size) of two rep stages each predict the center heatmap, the sub-cell
center offset and the normalized box size, all through sigmoids. During
training each rep stage runs three parallel branches (3x3 conv, 1x1 conv and
identity, each followed by batch norm); `fuse()` folds them algebraically into
one 3x3 conv + bias for inference, which must reproduce eval-mode outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import BatchNorm2d, Conv2d, Module

WIDTH = 96


@dataclass
class HeadOutput:
    cls: object    # (N, 1, h, w) in (0,1)
    offset: object  # (N, 2, h, w) in (0,1)
    size: object   # (N, 2, h, w) in (0,1)


def _fold_bn(kernel, bn):
    """Fold eval-mode batch norm into a preceding bias-free conv kernel."""
    t = bn.gamma.data / np.sqrt(bn.running_var + bn.eps)
    return kernel * t[:, None, None, None], bn.beta.data - bn.running_mean * t


class RepStage(Module):
    """96->96 stage: 3x3 || 1x1 || identity branches with batch norms."""

    def __init__(self, store, name, rng):
        super().__init__()
        self.store, self.name = store, name
        self.fused = False
        self.conv3 = self.add(Conv2d(store, f"{name}.conv3", WIDTH, WIDTH, k=3,
                                     bias=False, rng=rng))
        self.bn3 = self.add(BatchNorm2d(store, f"{name}.bn3", WIDTH))
        self.conv1 = self.add(Conv2d(store, f"{name}.conv1", WIDTH, WIDTH, k=1,
                                     bias=False, rng=rng))
        self.bn1 = self.add(BatchNorm2d(store, f"{name}.bn1", WIDTH))
        self.bn_id = self.add(BatchNorm2d(store, f"{name}.bn_id", WIDTH))

    def __call__(self, x):
        if self.fused:
            return T.conv2d(x, self.fw, self.fb)
        return T.add(T.add(self.bn3(self.conv3(x)), self.bn1(self.conv1(x))),
                     self.bn_id(x))

    def fused_kernel(self):
        """Equivalent single 3x3 kernel + bias of the eval-mode stage."""
        k3, b3 = _fold_bn(self.conv3.w.data, self.bn3)
        k1, b1 = _fold_bn(self.conv1.w.data, self.bn1)
        k1 = np.pad(k1, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ident = np.zeros((WIDTH, WIDTH, 3, 3))
        ident[np.arange(WIDTH), np.arange(WIDTH), 1, 1] = 1.0
        kid, bid = _fold_bn(ident, self.bn_id)
        return k3 + k1 + kid, b3 + b1 + bid

    def fuse(self):
        if self.fused:
            return
        kernel, bias = self.fused_kernel()
        for suffix in ("conv3", "bn3", "conv1", "bn1", "bn_id"):
            self.store.remove_prefix(f"{self.name}.{suffix}")
        self.fw = self.store.param(f"{self.name}.fused.weight", kernel)
        self.fb = self.store.param(f"{self.name}.fused.bias", bias)
        self._children = []
        self.fused = True

    def macs(self, h, w):
        if self.fused:
            return WIDTH * WIDTH * 9 * h * w
        return WIDTH * WIDTH * 9 * h * w + WIDTH * WIDTH * h * w


class _Branch(Module):
    def __init__(self, store, name, out_channels, rng, bias_init=0.0):
        super().__init__()
        self.stage1 = self.add(RepStage(store, f"{name}.stage1", rng))
        self.stage2 = self.add(RepStage(store, f"{name}.stage2", rng))
        # small final weights keep early outputs near the bias prior, so the
        # box branches are not dragged around by the initial cls updates
        self.out = self.add(Conv2d(store, f"{name}.out", WIDTH, out_channels,
                                   k=1, rng=rng, weight_std=1e-3,
                                   bias_init=bias_init))

    def __call__(self, x):
        return self.out(T.relu(self.stage2(T.relu(self.stage1(x)))))

    def fuse(self):
        self.stage1.fuse()
        self.stage2.fuse()

    def macs(self, h, w):
        return (self.stage1.macs(h, w) + self.stage2.macs(h, w)
                + self.out.macs(h, w))


class RepCenterHead(Module):
    def __init__(self, store, name, in_channels, rng):
        super().__init__()
        self.store, self.name = store, name
        self.in_channels = in_channels
        self.stem = self.add(Conv2d(store, f"{name}.stem", in_channels, WIDTH,
                                    k=1, rng=rng))
        self.stem_bn = self.add(BatchNorm2d(store, f"{name}.stem_bn", WIDTH))
        # cls bias starts at the 0.1 prior so the focal loss does not swamp
        # the box terms in the first epochs
        self.cls = self.add(_Branch(store, f"{name}.cls", 1, rng,
                                    bias_init=float(np.log(0.1 / 0.9))))
        self.offset = self.add(_Branch(store, f"{name}.offset", 2, rng))
        self.size = self.add(_Branch(store, f"{name}.size", 2, rng))

    def __call__(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"head expects {self.in_channels} input channels, "
                             f"got {x.shape}")
        feat = T.relu(self.stem_bn(self.stem(x)))
        return HeadOutput(cls=T.sigmoid(self.cls(feat)),
                          offset=T.sigmoid(self.offset(feat)),
                          size=T.sigmoid(self.size(feat)))

    def fuse(self):
        """Fold every rep stage into a single conv; idempotent."""
        for branch in (self.cls, self.offset, self.size):
            branch.fuse()
        return self

    def macs(self, h, w):
        return (self.stem.macs(h, w) + self.cls.macs(h, w)
                + self.offset.macs(h, w) + self.size.macs(h, w))
