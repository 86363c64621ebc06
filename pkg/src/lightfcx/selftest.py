"""Built-in invariant suite for the `selftest` subcommand.

Each check recomputes its expectation from an independent formulation (loop
oracles, finite differences, a from-scratch metric reimplementation) and
reports the measured tolerance. These run on a fresh in-memory build; a
weights file can additionally be validated for loadability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrackerConfig, TrainConfig
from .data import SynthSpec, synth_sequence
from .ecam import EcamBlock
from .head import RepCenterHead
from .metrics import (SUCCESS_THRESHOLDS, normalized_precision, precision_rate,
                      success_rate)
from .model import TrackerNet
from .params import ParamStore
from .tracker import should_update
from .trainer import build_pairs, train_phase2_stam


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _fd_scalar(f, x, i, h=1e-5):
    flat = x.reshape(-1)
    orig = flat[i]
    flat[i] = orig + h
    fp = f()
    flat[i] = orig - h
    fm = f()
    flat[i] = orig
    return (fp - fm) / (2 * h)


def check_matmul_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    got = T.matmul(T.Tensor(a), T.Tensor(b)).data
    ref = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                ref[i, j] += a[i, k] * b[k, j]
    err = np.abs(got - ref).max()
    return CheckResult("matmul vs triple-loop oracle", err < 1e-12,
                       f"max abs diff {err:.2e} (tol 1e-12)")


def check_conv_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    got = T.conv2d(T.Tensor(x), T.Tensor(w)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(got)
    for o in range(3):
        for yy in range(5):
            for xx in range(5):
                ref[0, o, yy, xx] = np.sum(xp[0, :, yy:yy + 3, xx:xx + 3] * w[o])
    err = np.abs(got - ref).max()
    return CheckResult("conv2d vs naive loop oracle", err < 1e-10,
                       f"max abs diff {err:.2e} (tol 1e-10)")


def check_block_gradient():
    rng = np.random.default_rng(2)
    block = EcamBlock(ParamStore(), "ecam.0", "fused", rng).eval()
    xr = rng.normal(size=(1, 96, 3, 3))
    xx = rng.normal(size=(1, 96, 3, 3))
    proj = rng.normal(size=(1, 96, 3, 3))

    def loss_value():
        out = block(T.Tensor(xr), T.Tensor(xx)).fused
        return T.tsum(T.mul(out, T.Tensor(proj))).item()

    t_in = T.Tensor(xr, requires_grad=True)
    out = block(t_in, T.Tensor(xx)).fused
    T.tsum(T.mul(out, T.Tensor(proj))).backward()
    worst = 0.0
    probe_rng = np.random.default_rng(3)
    for _ in range(10):
        i = int(probe_rng.integers(0, xr.size))
        num = _fd_scalar(loss_value, xr, i)
        got = t_in.grad.reshape(-1)[i]
        worst = max(worst, abs(got - num) / max(1.0, abs(got), abs(num)))
    return CheckResult("fusion block gradient vs finite differences",
                       worst < 1e-4, f"max rel err {worst:.2e} (tol 1e-4)")


def check_rep_fusion():
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        head = RepCenterHead(ParamStore(), "head", 416, rng).eval()
        for name, buf in head.store.buffers():
            if name.endswith("running_mean"):
                buf += rng.normal(size=buf.shape) * 0.2
            else:
                buf *= rng.uniform(0.5, 2.0, size=buf.shape)
        x = rng.normal(size=(1, 416, 3, 3))
        before = head(T.Tensor(x))
        head.fuse()
        after = head(T.Tensor(x))
        for a, b in zip((before.cls, before.offset, before.size),
                        (after.cls, after.offset, after.size)):
            worst = max(worst, np.abs(a.data - b.data).max())
    return CheckResult("rep-head fusion equivalence", worst < 1e-5,
                       f"max abs diff {worst:.2e} over 5 seeds (tol 1e-5)")


def _metrics_brute_force(pred, gt):
    ious, errs, nerrs = [], [], []
    for p, g in zip(pred, gt):
        if g[2] == 0 and g[3] == 0:
            continue
        ix1, iy1 = max(p[0], g[0]), max(p[1], g[1])
        ix2, iy2 = min(p[0] + p[2], g[0] + g[2]), min(p[1] + p[3], g[1] + g[3])
        inter = max(ix2 - ix1, 0.0) * max(iy2 - iy1, 0.0)
        ious.append(inter / (p[2] * p[3] + g[2] * g[3] - inter))
        dx = (p[0] + p[2] / 2) - (g[0] + g[2] / 2)
        dy = (p[1] + p[3] / 2) - (g[1] + g[3] / 2)
        errs.append((dx ** 2 + dy ** 2) ** 0.5)
        nerrs.append(((dx / g[2]) ** 2 + (dy / g[3]) ** 2) ** 0.5)
    sr = sum(sum(1 for v in ious if v > t) / len(ious)
             for t in SUCCESS_THRESHOLDS) / 21
    pr = sum(1 for e in errs if e <= 20.0) / len(errs)
    npr = sum(sum(1 for e in nerrs if e <= t) / len(nerrs)
              for t in np.linspace(0, 0.5, 51)) / 51
    return sr, pr, npr


def check_metric_oracles():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(5, 30))
        gt = np.column_stack([rng.uniform(0, 200, n), rng.uniform(0, 200, n),
                              rng.uniform(10, 60, n), rng.uniform(10, 60, n)])
        pred = gt + rng.normal(0, 8, size=gt.shape)
        pred[:, 2:] = np.abs(pred[:, 2:]) + 1
        bf = _metrics_brute_force(pred, gt)
        got = (success_rate(pred, gt)[1], precision_rate(pred, gt)[1],
               normalized_precision(pred, gt)[1])
        worst = max(worst, max(abs(a - b) for a, b in zip(bf, got)))
    return CheckResult("metrics vs brute-force reimplementation",
                       worst < 1e-12, f"max abs diff {worst:.2e} (tol 1e-12)")


def check_freeze_contract():
    cfg = TrackerConfig(template_size=32, search_size=64,
                        stam_enabled=True).validate()
    net = TrackerNet(cfg, seed=0)
    seq = synth_sequence(SynthSpec(frames=8, image_size=96, size_px=24,
                                   speed_px=2.0), seed=5)
    pairs = build_pairs(seq, 4, seed=6, config=cfg, with_dynamic=True)
    before = {n: t.data.tobytes() for n, t in net.store.items()
              if not n.startswith("stam.")}
    before_buf = {n: b.tobytes() for n, b in net.store.buffers()
                  if not n.startswith("stam.")}
    before_stam = {n: net.store.get(n).data.tobytes()
                   for n in net.store.names("stam.")}
    train_phase2_stam(net, pairs, steps=5, train_cfg=TrainConfig(batch_size=2),
                      seed=7)
    frozen_ok = all(net.store.get(n).data.tobytes() == v
                    for n, v in before.items())
    buf_ok = all(dict(net.store.buffers())[n].tobytes() == v
                 for n, v in before_buf.items())
    stam_changed = any(net.store.get(n).data.tobytes() != v
                       for n, v in before_stam.items())
    ok = frozen_ok and buf_ok and stam_changed
    return CheckResult("phase-2 freeze contract",
                       ok, "non-stam params byte-identical: %s; buffers: %s; "
                           "stam changed: %s" % (frozen_ok, buf_ok, stam_changed))


def check_update_rule():
    cfg = TrackerConfig().validate()
    cases = [(400, 0.7, True), (399, 0.9, False), (400, 0.69, False),
             (1000, 1.0, True), (0, 1.0, False), (400, 0.0, False)]
    ok = all(should_update(f, 0, c, cfg) is e for f, c, e in cases)
    return CheckResult("template update truth table", ok,
                       f"{len(cases)} interval/confidence cases")


def check_weights_roundtrip():
    import os
    import tempfile

    from .weights_io import load_weights, save_weights
    cfg = TrackerConfig(template_size=32, search_size=64).validate()
    net = TrackerNet(cfg, seed=1)
    with tempfile.TemporaryDirectory() as td:
        path = os.path.join(td, "w.lfcx")
        save_weights(net.store, path)
        net2 = TrackerNet(cfg, seed=2)
        load_weights(net2.store, path)
        worst = max(np.abs(net.store.get(n).data - net2.store.get(n).data).max()
                    for n in net.store.names())
    return CheckResult("weights container round trip", worst < 1e-7,
                       f"max abs diff {worst:.2e} after f32 narrowing (tol 1e-7)")


ALL_CHECKS = [check_matmul_oracle, check_conv_oracle, check_block_gradient,
              check_rep_fusion, check_metric_oracles, check_freeze_contract,
              check_update_rule, check_weights_roundtrip]


def run_selftest(weights_path=None):
    """Run every check; returns (results, all_passed)."""
    results = []
    if weights_path is not None:
        from .weights_io import read_entries
        try:
            entries = read_entries(weights_path)
            results.append(CheckResult("weights file readable", True,
                                       f"{len(entries)} entries"))
        except Exception as exc:
            results.append(CheckResult("weights file readable", False, str(exc)))
    for check in ALL_CHECKS:
        results.append(check())
    return results, all(r.passed for r in results)
