"""Network layers: thin stateful wrappers over the tensor ops.

Each layer registers its parameters (and batch-norm buffers) into a ParamStore
under a dotted name, so freezing, counting and serialization all key off the
same names. `Module` is a minimal composite that propagates train/eval mode.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T


class Module:
    """Composite node: tracks children so train()/eval() reaches every layer."""

    def __init__(self):
        self._children = []
        self.training = True

    def add(self, child):
        self._children.append(child)
        return child

    def train(self, mode=True):
        self.training = mode
        for c in self._children:
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def modules(self):
        """Depth-first iterator over this module and every descendant."""
        yield self
        for c in self._children:
            yield from c.modules()


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, store, name, c_in, c_out, k=1, stride=1, bias=True,
                 groups=1, rng=None, weight_std=None, bias_init=0.0):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.groups = stride, groups
        if weight_std is None:
            fan_in = (c_in // groups) * k * k
            w = he_normal(rng, (c_out, c_in // groups, k, k), fan_in)
        else:
            w = rng.normal(0.0, weight_std, (c_out, c_in // groups, k, k))
        self.w = store.param(f"{name}.weight", w)
        self.b = store.param(f"{name}.bias",
                             np.full(c_out, float(bias_init))) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, groups=self.groups)

    def macs(self, oh, ow):
        return (self.c_in // self.groups) * self.k * self.k * self.c_out * oh * ow


class DWConv2d(Module):
    def __init__(self, store, name, channels, k, bias=True, rng=None):
        super().__init__()
        self.channels, self.k = channels, k
        w = he_normal(rng, (channels, 1, k, k), k * k)
        self.w = store.param(f"{name}.weight", w)
        self.b = store.param(f"{name}.bias", np.zeros(channels)) if bias else None

    def __call__(self, x):
        return T.dwconv2d(x, self.w, self.b)

    def macs(self, oh, ow):
        return self.channels * self.k * self.k * oh * ow


class BatchNorm2d(Module):
    def __init__(self, store, name, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = store.param(f"{name}.gamma", np.ones(channels))
        self.beta = store.param(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = store.buffer(f"{name}.running_var", np.ones(channels))

    def __call__(self, x):
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, self.training,
                           momentum=self.momentum, eps=self.eps)

    def macs(self, oh, ow):
        return 0


class LayerNorm(Module):
    """Per-token normalization over the trailing channel axis."""

    def __init__(self, store, name, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = store.param(f"{name}.gamma", np.ones(channels))
        self.beta = store.param(f"{name}.beta", np.zeros(channels))

    def __call__(self, x):
        return T.layernorm(x, self.gamma, self.beta, eps=self.eps)

    def macs(self, tokens):
        return 0


class Linear(Module):
    """Per-token affine map (..., c_in) -> (..., c_out); equals a 1x1 conv."""

    def __init__(self, store, name, c_in, c_out, bias=True, rng=None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.w = store.param(f"{name}.weight", he_normal(rng, (c_in, c_out), c_in))
        self.b = store.param(f"{name}.bias", np.zeros(c_out)) if bias else None

    def __call__(self, x):
        return T.linear(x, self.w, self.b)

    def macs(self, tokens):
        return self.c_in * self.c_out * tokens


def map_to_tokens(x):
    """(N, C, H, W) -> (N, H*W, C), row-major over the spatial grid."""
    n, c, h, w = x.shape
    return T.reshape(T.transpose(x, (0, 2, 3, 1)), (n, h * w, c))


def tokens_to_map(x, h, w):
    """(N, T, C) -> (N, C, H, W) inverse of map_to_tokens."""
    n, t, c = x.shape
    return T.transpose(T.reshape(x, (n, h, w, c)), (0, 3, 1, 2))
