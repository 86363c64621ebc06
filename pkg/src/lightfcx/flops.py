"""Analytic multiply-accumulate counting.

Formulas (MACs, not FLOPs; one MAC = one multiply + one add):
  - conv2d:      (C_in / groups) * k^2 * C_out * H_out * W_out
  - depthwise:   C * k^2 * H_out * W_out
  - linear:      C_in * C_out * tokens      (equals a 1x1 conv on maps)
  - attention:   2 * T_q * T_k * C per direction (QK^T scores plus the
                 weighted value sum); softmax itself counts 0
  - norm layers, activations, elementwise adds: 0 MACs

Layer classes expose `.macs(...)` built on these; `model.macs_table()` walks
a configured network. The identity / no-op layer costs 0 by definition.
"""

from __future__ import annotations


def conv2d_macs(c_in, c_out, k, out_h, out_w, groups=1):
    return (c_in // groups) * k * k * c_out * out_h * out_w


def dwconv2d_macs(channels, k, out_h, out_w):
    return channels * k * k * out_h * out_w


def linear_macs(c_in, c_out, tokens):
    return c_in * c_out * tokens


def attention_macs(tokens_q, tokens_k, channels):
    """One cross-attention direction: scores (Tq*Tk*C) + values (Tq*Tk*C)."""
    return 2 * tokens_q * tokens_k * channels


def identity_macs():
    return 0


def count_flops(model):
    """Total MACs per forward pass of a configured TrackerNet (per modality
    pair, search-branch spatial sizes), as (rows, total)."""
    rows = model.macs_table()
    return rows, sum(v for _, v in rows)
