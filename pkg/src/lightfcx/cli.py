"""Command-line entry point.

Subcommands: track, eval, train-toy, params, flops, synth, selftest.
Exit codes: 0 success, 1 contract/validation error, 2 I/O error.
Every subcommand is deterministic under --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import TrackerConfig, TrainConfig, VARIANTS, load_config
from .errors import ContractError, DataError
from .model import TrackerNet


def _build_config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else TrackerConfig()
    overrides = {}
    for key in ("variant", "template_size", "search_size", "update_interval",
                "update_conf_threshold", "window_influence", "ecam_stack_depth",
                "seed"):
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "stam", None) is not None:
        overrides["stam_enabled"] = args.stam == "on"
    return replace(cfg, **overrides).validate()


def _add_model_flags(p):
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--ecam-stack", dest="ecam_stack_depth", type=int, default=None)
    p.add_argument("--stam", choices=["on", "off"], default=None)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--template-size", dest="template_size", type=int, default=None)
    p.add_argument("--search-size", dest="search_size", type=int, default=None)


def cmd_track(args):
    from .data import load_sequence
    from .tracker import Tracker, save_confidences, save_results, track_sequence
    from .weights_io import load_weights

    cfg = _build_config(args)
    net = TrackerNet(cfg, seed=cfg.seed)
    ignore = () if cfg.stam_enabled else ("stam.",)
    load_weights(net.store, args.weights, ignore_prefixes=ignore)
    seq = load_sequence(args.seq, cfg.modality_dir, modality=cfg.variant)
    results, confidences = track_sequence(Tracker(net), seq)
    save_results(args.out, results)
    conf_path = Path(args.out).with_name(Path(args.out).stem + "_confidence.txt")
    save_confidences(conf_path, confidences)
    print(f"tracked {len(seq)} frames -> {args.out}")
    return 0


def _read_results(path):
    """Result rows: 4 values per line, or 8 for the two-box rgbs format."""
    rows = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.replace("\t", ",").split(",")
        if len(parts) not in (4, 8):
            raise DataError(f"{path}:{lineno}: expected 4 or 8 values, "
                            f"got {len(parts)}")
        rows.append([float(p) for p in parts])
    arr = np.asarray(rows, dtype=np.float64)
    if arr.size and len({r.size for r in arr}) > 1:
        raise DataError(f"{path}: mixed 4- and 8-value lines")
    return arr


def _eval_one(seq_dir, results_dir, protocol):
    """Yield (name, pred[, conf], gt) entries; rgbs results add a second
    '<name>[sonar]' entry scored against groundtruth_sonar.txt."""
    from .data import parse_groundtruth
    name = seq_dir.name
    result_file = results_dir / f"{name}.txt"
    if not result_file.is_file():
        raise DataError(f"no results file for sequence {name}: {result_file}")
    pred = _read_results(result_file)
    gt = parse_groundtruth(seq_dir / "groundtruth.txt")
    if len(pred) != len(gt):
        raise DataError(f"{name}: {len(pred)} result lines vs {len(gt)} gt lines")
    conf = None
    if protocol == "longterm":
        conf_file = results_dir / f"{name}_confidence.txt"
        if not conf_file.is_file():
            raise DataError(f"{name}: long-term protocol needs {conf_file}")
        conf = np.array([float(line) for line in conf_file.read_text().split()])
    entries = []

    def entry(label, boxes, truth):
        entries.append((label, boxes, conf, truth) if conf is not None
                       else (label, boxes, truth))

    entry(name, pred[:, :4], gt)
    sonar_gt = seq_dir / "groundtruth_sonar.txt"
    if pred.shape[1] == 8:
        if not sonar_gt.is_file():
            raise DataError(f"{name}: two-box results but no "
                            f"groundtruth_sonar.txt")
        entry(f"{name}[sonar]", pred[:, 4:], parse_groundtruth(sonar_gt))
    return entries


def cmd_eval(args):
    from .metrics import evaluate_longterm, evaluate_ope

    dataset = Path(args.dataset)
    results_dir = Path(args.results)
    seq_dirs = sorted(d for d in dataset.iterdir() if d.is_dir())
    if not seq_dirs:
        raise DataError(f"no sequence directories under {dataset}")
    jobs = max(1, args.jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        groups = pool.map(lambda d: _eval_one(d, results_dir, args.protocol),
                          seq_dirs)
        tracks = [entry for group in groups for entry in group]
    report = (evaluate_longterm(tracks) if args.protocol == "longterm"
              else evaluate_ope(tracks))
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    for k, v in report["aggregate"].items():
        print(f"{k}: {v:.4f}")
    print(f"report -> {args.report}")
    return 0


def _synth_spec(cfg, args):
    from .data import SynthSpec
    return SynthSpec(
        frames=args.frames if args.frames is not None else cfg.synth_frames,
        image_size=(args.image_size if args.image_size is not None
                    else cfg.synth_image_size),
        size_px=(args.target_px if args.target_px is not None
                 else cfg.synth_size_px),
        speed_px=(args.speed_px if args.speed_px is not None
                  else cfg.synth_speed_px),
        noise=(args.noise if getattr(args, "noise", None) is not None
               else cfg.synth_noise))


def cmd_train_toy(args):
    from .data import synth_sequence
    from .trainer import (build_pairs, pair_sampler, train_phase1,
                          train_phase2_stam)
    from .weights_io import load_weights, save_weights

    cfg = _build_config(args)
    if args.phase == 2:
        cfg = replace(cfg, stam_enabled=True).validate()
    net = TrackerNet(cfg, seed=cfg.seed)
    spec = _synth_spec(cfg, args)
    seq = synth_sequence(spec, seed=cfg.seed, modality=cfg.variant)
    tc = TrainConfig(batch_size=args.batch, lr=args.lr,
                     decay_epoch=args.decay_epoch)
    log = (lambda s, p: print(f"step {s}: total={p['total']:.4f} "
                              f"cls={p['cls']:.4f} giou={p['giou']:.4f} "
                              f"l1={p['l1']:.4f}"))
    if args.phase == 1:
        if args.pairs > 0:
            data = build_pairs(seq, args.pairs, seed=cfg.seed + 1, config=cfg,
                               train_cfg=tc)
        else:
            data = pair_sampler(seq, cfg, tc)
        train_phase1(net, data, steps=args.steps, train_cfg=tc,
                     seed=cfg.seed + 2, log=log)
    else:
        if not args.init:
            raise ContractError("phase 2 needs --init with phase-1 weights")
        load_weights(net.store, args.init, allow_missing=("stam.",))
        # phase 2 always trains on a fixed set: the frozen backbone features
        # are precomputed once per pair
        data = build_pairs(seq, args.pairs if args.pairs > 0 else 64,
                           seed=cfg.seed + 1, config=cfg, train_cfg=tc,
                           with_dynamic=True)
        train_phase2_stam(net, data, steps=args.steps, train_cfg=tc,
                          seed=cfg.seed + 2, log=log)
    save_weights(net.store, args.out)
    sidecar = Path(args.out).with_suffix(".hyper.txt")
    sidecar.write_text(
        "".join(f"{k} = {v}\n" for k, v in vars(tc).items()), encoding="utf-8")
    print(f"weights -> {args.out}")
    return 0


def cmd_params(args):
    from .params import count_params

    cfg = _build_config(args)
    net = TrackerNet(cfg, seed=cfg.seed)
    rows = net.param_groups()
    width = max(len(g) for g, _ in rows)
    for group, count in rows:
        print(f"{group:<{width}}  {count:>12,}  ({count / 1e6:.3f}M)")
    total = count_params(net.store)
    print(f"{'total':<{width}}  {total:>12,}  ({total / 1e6:.3f}M)")
    return 0


def cmd_flops(args):
    from .flops import count_flops

    cfg = _build_config(args)
    net = TrackerNet(cfg, seed=cfg.seed)
    rows, total = count_flops(net)
    width = max(len(n) for n, _ in rows)
    for name, macs in rows:
        print(f"{name:<{width}}  {macs:>15,} MACs")
    print(f"{'total (counting per-modality rows once)':<{width}}  {total:>15,} MACs")
    return 0


def cmd_synth(args):
    from .data import synth_sequence, write_sequence

    cfg = _build_config(args)
    spec = _synth_spec(cfg, args)
    seq = synth_sequence(spec, seed=cfg.seed, modality=cfg.variant)
    write_sequence(seq, args.out, cfg.modality_dir)
    print(f"{spec.frames} frames -> {args.out}")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    results, ok = run_selftest(weights_path=args.weights)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  [{r.detail}]")
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lightfcx",
        description="Lightweight multimodal tracking engine (batch tooling)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run one-pass tracking over a sequence")
    _add_model_flags(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--seq", required=True, help="sequence directory")
    p.add_argument("--out", required=True, help="results file (x,y,w,h per line)")
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("eval", help="score results against a dataset")
    _add_model_flags(p)
    p.add_argument("--results", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", choices=["ope", "longterm"], default="ope")
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("train-toy", help="desk-scale two-phase training")
    _add_model_flags(p)
    p.add_argument("--phase", type=int, choices=[1, 2], required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="phase-1 weights (required for --phase 2)")
    p.add_argument("--pairs", type=int, default=0,
                   help="fixed pair count; 0 samples fresh crops every step")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--decay-epoch", dest="decay_epoch", type=int, default=40)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--target-px", dest="target_px", type=int, default=None)
    p.add_argument("--speed-px", dest="speed_px", type=float, default=None)
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("params", help="per-module parameter counts")
    _add_model_flags(p)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("flops", help="per-module multiply-accumulate counts")
    _add_model_flags(p)
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("synth", help="generate a synthetic sequence directory")
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--target-px", dest="target_px", type=int, default=None)
    p.add_argument("--speed-px", dest="speed_px", type=float, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("--weights", default=None,
                   help="optionally validate a weights file")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ContractError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
