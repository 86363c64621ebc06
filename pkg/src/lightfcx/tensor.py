"""Dense float64 tensor core with reverse-mode automatic differentiation.

Every value is a `Tensor`: a contiguous row-major float64 numpy array plus an
optional gradient slot, an operator tag and references to the parent tensors
that produced it. Graphs are built define-by-run and swept once by
`Tensor.backward()`; gradients accumulate by summation. Nodes whose parents
all have ``requires_grad=False`` drop their parent references, so untrained
subgraphs (e.g. a frozen feature extractor) cost nothing at backward time.

Shape discipline: operators reject mismatched shapes with `ShapeError`. The
only implicit broadcasts are the documented bias adds inside `conv2d`,
`dwconv2d` and `linear`, and the per-channel affine terms inside the norm
layers. Scalars (Python floats) are accepted by the arithmetic dunders.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A float64 array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # np.ascontiguousarray would turn 0-d into 1-d
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse sweep from a scalar root; populates .grad on reachable nodes."""
        if self.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar (Tensor op Tensor must be same-shape; floats allowed) --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(neg(self), _wrap(other))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _scalar_err(t):
    raise ContractError(f"item() needs a scalar, got shape {t.shape}")


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _make(data, parents, op, backward):
    """Wrap an op result; prunes the graph when no parent needs gradients."""
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data, rg, op, parents if rg else ())
    if rg:
        out._backward = backward
    return out


def _acc(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes differ: {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    if not isinstance(b, Tensor):
        a = _wrap(a)
        c = float(b)

        def bw(g):
            _acc(a, g)

        return _make(a.data + c, (a,), "add_const", bw)
    a = _wrap(a)
    _same_shape(a, b, "add")

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return _make(a.data + b.data, (a, b), "add", bw)


def neg(a):
    def bw(g):
        _acc(a, -g)

    return _make(-a.data, (a,), "neg", bw)


def mul(a, b):
    if not isinstance(b, Tensor):
        a = _wrap(a)
        c = float(b)

        def bw(g):
            _acc(a, g * c)

        return _make(a.data * c, (a,), "mul_const", bw)
    a = _wrap(a)
    _same_shape(a, b, "mul")

    def bw(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    a = _wrap(a)
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    _same_shape(a, b, "div")

    def bw(g):
        _acc(a, g / b.data)
        _acc(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), "div", bw)


def powc(a, p):
    """a ** p for a constant exponent p."""
    p = float(p)

    def bw(g):
        _acc(a, g * p * np.power(a.data, p - 1.0))

    return _make(np.power(a.data, p), (a,), "powc", bw)


def exp(a):
    out_data = np.exp(a.data)

    def bw(g):
        _acc(a, g * out_data)

    return _make(out_data, (a,), "exp", bw)


def log(a):
    def bw(g):
        _acc(a, g / a.data)

    return _make(np.log(a.data), (a,), "log", bw)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bw(g):
        _acc(a, g * 0.5 / out_data)

    return _make(out_data, (a,), "sqrt", bw)


def absval(a):
    def bw(g):
        _acc(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), "abs", bw)


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the clamp is inactive."""
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        _acc(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), "clip", bw)


def maximum(a, b):
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "maximum")
    take_a = a.data >= b.data

    def bw(g):
        _acc(a, g * take_a)
        _acc(b, g * ~take_a)

    return _make(np.maximum(a.data, b.data), (a, b), "maximum", bw)


def minimum(a, b):
    a, b = _wrap(a), _wrap(b)
    _same_shape(a, b, "minimum")
    take_a = a.data <= b.data

    def bw(g):
        _acc(a, g * take_a)
        _acc(b, g * ~take_a)

    return _make(np.minimum(a.data, b.data), (a, b), "minimum", bw)


def relu(a):
    mask = a.data > 0

    def bw(g):
        _acc(a, g * mask)

    return _make(a.data * mask, (a,), "relu", bw)


def gelu(a):
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _acc(a, g * (cdf + x * pdf))

    return _make(x * cdf, (a,), "gelu", bw)


def sigmoid(a):
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                        np.exp(a.data) / (1.0 + np.exp(a.data)))

    def bw(g):
        _acc(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), "sigmoid", bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a):
    def bw(g):
        _acc(a, np.full_like(a.data, float(np.asarray(g).reshape(()))))

    return _make(np.array(a.data.sum()), (a,), "sum", bw)


def tmean(a):
    n = a.data.size

    def bw(g):
        _acc(a, np.full_like(a.data, float(np.asarray(g).reshape(())) / n))

    return _make(np.array(a.data.mean()), (a,), "mean", bw)


def reshape(a, shape):
    def bw(g):
        _acc(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), "reshape", bw)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _acc(a, g.transpose(inv))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose", bw)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _acc(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), "concat", bw)


def getitem(a, idx):
    """Basic (int/slice tuple) indexing; backward scatters into a zero grad."""
    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _acc(a, full)

    return _make(a.data[idx].copy(), (a,), "getitem", bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product; inner extents must match."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner extents differ: {a.data.shape} x {b.data.shape}")

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def bmm(a, b):
    """Batched matrix product on (B, m, k) x (B, k, n)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm expects 3-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes: {a.data.shape} x {b.data.shape}")

    def bw(g):
        _acc(a, g @ b.data.transpose(0, 2, 1))
        _acc(b, a.data.transpose(0, 2, 1) @ g)

    return _make(a.data @ b.data, (a, b), "bmm", bw)


def linear(x, w, b=None):
    """Per-row affine map: x (..., C_in) @ w (C_in, C_out) + b (C_out,)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: input channels {x.data.shape} vs weight {w.data.shape}")
    out_data = x.data @ w.data
    if b is not None:
        out_data = out_data + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        _acc(x, g @ w.data.T)
        x2 = x.data.reshape(-1, x.data.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        _acc(w, x2.T @ g2)
        if b is not None:
            _acc(b, g2.sum(axis=0))

    return _make(out_data, parents, "linear", bw)


def softmax(a, axis=-1):
    """Max-subtracted softmax along `axis`; rows sum to one."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _acc(a, out_data * (g - dot))

    return _make(out_data, (a,), "softmax", bw)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layernorm(x, gamma, beta, eps=1e-5):
    """Per-row normalization over the last axis, then affine gamma/beta."""
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"layernorm: affine shape {gamma.data.shape}/{beta.data.shape} "
                         f"vs channels {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bw(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        _acc(x, inv * (gg - m1 - xhat * m2))
        axes = tuple(range(g.ndim - 1))
        _acc(gamma, (g * xhat).sum(axis=axes))
        _acc(beta, g.sum(axis=axes))

    return _make(out_data, (x, gamma, beta), "layernorm", bw)


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Per-channel batch normalization on (N, C, H, W).

    Train mode normalizes with batch statistics over (N, H, W) and updates the
    running buffers in place (running variance uses the unbiased estimator).
    Eval mode normalizes with the stored running statistics.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm expects (N,C,H,W), got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,):
        raise ShapeError(f"batchnorm: gamma shape {gamma.data.shape} vs channels {c}")
    axes = (0, 2, 3)
    gshape = (1, c, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // c
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * (var * n / max(n - 1, 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(gshape)) * inv.reshape(gshape)
        out_data = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

        def bw(g):
            gg = g * gamma.data.reshape(gshape)
            m1 = gg.mean(axis=axes).reshape(gshape)
            m2 = (gg * xhat).mean(axis=axes).reshape(gshape)
            _acc(x, inv.reshape(gshape) * (gg - m1 - xhat * m2))
            _acc(gamma, (g * xhat).sum(axis=axes))
            _acc(beta, g.sum(axis=axes))

        return _make(out_data, (x, gamma, beta), "batchnorm_train", bw)

    inv = 1.0 / np.sqrt(running_var + eps)
    scale = (gamma.data * inv).reshape(gshape)
    shift = (beta.data - gamma.data * running_mean * inv).reshape(gshape)
    out_data = x.data * scale + shift
    xhat = (x.data - running_mean.reshape(gshape)) * inv.reshape(gshape)

    def bw(g):
        _acc(x, g * scale)
        _acc(gamma, (g * xhat).sum(axis=axes))
        _acc(beta, g.sum(axis=axes))

    return _make(out_data, (x, gamma, beta), "batchnorm_eval", bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _windows(xd, kh, kw, stride, pad):
    """Strided sliding-window view (N, C, OH, OW, kh, kw) over a padded input."""
    n, c, h, w = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hp, wp = xp.shape[2], xp.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, c, oh, ow, kh, kw), (sn, sc, sh * stride, sw * stride, sh, sw))
    return xp, view, oh, ow


def _scatter_windows(grad_win_fn, x_shape, kh, kw, stride, pad):
    """Accumulate per-offset window gradients back onto the input layout.

    grad_win_fn(i, j) must return the (N, C, OH, OW) gradient that lands at
    kernel offset (i, j).
    """
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    dxp = np.zeros((n, c, hp, wp))
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += grad_win_fn(i, j)
    return dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp


def conv2d(x, w, b=None, stride=1, padding=None, groups=1):
    """2-D cross-correlation on (N, C, H, W) with weights (O, C/groups, kh, kw).

    Default padding is (k - 1) // 2, which preserves the spatial size for odd
    kernels at stride 1. The optional bias (O,) broadcasts over N, H, W — the
    one documented implicit broadcast of the conv ops.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects (N,C,H,W) input, got {x.data.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d expects (O,I,kh,kw) weights, got {w.data.shape}")
    o, ig, kh, kw = w.data.shape
    c = x.data.shape[1]
    if ig * groups != c or o % groups != 0:
        raise ShapeError(f"conv2d: channel mismatch: input {x.data.shape}, "
                         f"weight {w.data.shape}, groups={groups}")
    if b is not None and b.data.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.data.shape} vs out channels {o}")
    pad = (kh - 1) // 2 if padding is None else int(padding)

    if groups == 1:
        _, win, oh, ow = _windows(x.data, kh, kw, stride, pad)
        out_data = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
        out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    else:
        _, win, oh, ow = _windows(x.data, kh, kw, stride, pad)
        og = o // groups
        parts = []
        for gidx in range(groups):
            wg = w.data[gidx * og:(gidx + 1) * og]
            xg = win[:, gidx * ig:(gidx + 1) * ig]
            og_out = np.tensordot(xg, wg, axes=([1, 4, 5], [1, 2, 3]))
            parts.append(og_out.transpose(0, 3, 1, 2))
        out_data = np.ascontiguousarray(np.concatenate(parts, axis=1))
    if b is not None:
        out_data += b.data.reshape(1, o, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        _, win_b, _, _ = _windows(x.data, kh, kw, stride, pad)
        if groups == 1:
            dw = np.tensordot(g, win_b, axes=([0, 2, 3], [0, 2, 3]))
            _acc(w, dw)
            if x.requires_grad:
                _acc(x, _scatter_windows(
                    lambda i, j: np.tensordot(g, w.data[:, :, i, j], axes=([1], [0])
                                              ).transpose(0, 3, 1, 2),
                    x.data.shape, kh, kw, stride, pad))
        else:
            og = o // groups
            dw = np.empty_like(w.data)
            for gidx in range(groups):
                gs = g[:, gidx * og:(gidx + 1) * og]
                xg = win_b[:, gidx * ig:(gidx + 1) * ig]
                dw[gidx * og:(gidx + 1) * og] = np.tensordot(
                    gs, xg, axes=([0, 2, 3], [0, 2, 3]))
            _acc(w, dw)
            if x.requires_grad:
                def grad_at(i, j):
                    blocks = []
                    for gidx in range(groups):
                        gs = g[:, gidx * og:(gidx + 1) * og]
                        wg = w.data[gidx * og:(gidx + 1) * og, :, i, j]
                        blocks.append(np.tensordot(gs, wg, axes=([1], [0])
                                                   ).transpose(0, 3, 1, 2))
                    return np.concatenate(blocks, axis=1)

                _acc(x, _scatter_windows(grad_at, x.data.shape, kh, kw, stride, pad))
        if b is not None:
            _acc(b, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, "conv2d", bw)


def dwconv2d(x, w, b=None):
    """Depthwise conv (groups == channels), stride 1, same padding, k odd."""
    if x.data.ndim != 4:
        raise ShapeError(f"dwconv2d expects (N,C,H,W) input, got {x.data.shape}")
    if w.data.ndim != 4 or w.data.shape[1] != 1:
        raise ShapeError(f"dwconv2d expects (C,1,k,k) weights, got {w.data.shape}")
    c = x.data.shape[1]
    kh, kw = w.data.shape[2], w.data.shape[3]
    if w.data.shape[0] != c:
        raise ShapeError(f"dwconv2d: channel mismatch: input {x.data.shape}, "
                         f"weight {w.data.shape}")
    if b is not None and b.data.shape != (c,):
        raise ShapeError(f"dwconv2d: bias shape {b.data.shape} vs channels {c}")
    pad = (kh - 1) // 2
    wk = w.data.reshape(c, kh, kw)
    _, win, oh, ow = _windows(x.data, kh, kw, 1, pad)
    out_data = np.einsum("nchwij,cij->nchw", win, wk, optimize=True)
    if b is not None:
        out_data += b.data.reshape(1, c, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        _, win_b, _, _ = _windows(x.data, kh, kw, 1, pad)
        dw = np.einsum("nchw,nchwij->cij", g, win_b, optimize=True)
        _acc(w, dw.reshape(c, 1, kh, kw))
        if x.requires_grad:
            _acc(x, _scatter_windows(
                lambda i, j: g * wk[:, i, j].reshape(1, c, 1, 1),
                x.data.shape, kh, kw, 1, pad))
        if b is not None:
            _acc(b, g.sum(axis=(0, 2, 3)))

    return _make(out_data, parents, "dwconv2d", bw)
