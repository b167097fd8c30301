"""Command-line front end: ``redt gen|train|eval|ablate|report``.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .data import generate_dataset, load_manifest
from .errors import DataError, NumericalError, UsageError
from .metrics import CSV_HEADER, RANGE_CSV_HEADER
from .model import ModelConfig
from .report import render_range_plot, text_table
from .scenes import SceneConfig
from .train import RunConfig, evaluate, evaluate_bands, load_model, train
from .tensor_io import read_checkpoint


def _parse_size(text):
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"size must look like 64x64, got {text!r}") from None
    if h % 32 or w % 32:
        raise UsageError(f"size {h}x{w} must be divisible by 32")
    return h, w


def _parse_ranges(text):
    try:
        edges = [float(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"ranges must be comma-separated numbers, got {text!r}") from None
    return edges


def _load_run_config(args, require_data=True) -> RunConfig:
    if args.config:
        with open(args.config) as f:
            cfg = RunConfig.from_dict(json.load(f))
    else:
        cfg = RunConfig()
    if args.data:
        cfg.data = args.data
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "dclip", None) is not None:
        cfg.d_clip = args.dclip
    if getattr(args, "no_rel_bias", False):
        cfg.rel_bias_enabled = False
    if getattr(args, "loss_form", None):
        cfg.loss_form = args.loss_form
    if getattr(args, "iters", None) is not None:
        cfg.total_iters = args.iters
        cfg.__post_init__()
    if require_data and not os.path.isdir(cfg.data):
        raise DataError(f"dataset directory not found: {cfg.data}")
    # pick the depth range and image size up from the dataset unless the
    # config file pinned a model explicitly
    if not args.config and os.path.isdir(cfg.data):
        man = load_manifest(cfg.data)
        cfg.model = ModelConfig(
            image_hw=(man.height, man.width), depth_min=man.depth_min, depth_max=man.depth_max
        )
    return cfg


def _write_eval_csvs(out_dir, report, per_map):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w") as f:
        f.write(CSV_HEADER + "\n" + report.csv_row() + "\n")
    with open(os.path.join(out_dir, "ranges.csv"), "w") as f:
        f.write(RANGE_CSV_HEADER + "\n")
        for row in report.range_csv_rows():
            f.write(row + "\n")
    with open(os.path.join(out_dir, "permap.csv"), "w") as f:
        f.write("map_index,rmse\n")
        for k, v in enumerate(per_map):
            f.write(f"{k},{format(v, '.9g') if v is not None else ''}\n")


def cmd_gen(args):
    hw = _parse_size(args.size)
    cfg = SceneConfig(height=hw[0], width=hw[1], depth_min=args.dmin, depth_max=args.dmax)
    manifest = generate_dataset(args.out, args.scenes, args.seed, cfg, sparsity=args.sparsity)
    print(f"wrote {manifest.count} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    result = train(cfg, args.out)
    print(f"trained {cfg.total_iters} iters in {result['wall_clock']:.1f}s -> {args.out}/model.ckpt")
    return 0


def _model_from_run_dir(run_dir):
    cfg_path = os.path.join(run_dir, "config.json")
    ckpt_path = os.path.join(run_dir, "model.ckpt")
    if not os.path.exists(cfg_path) or not os.path.exists(ckpt_path):
        raise DataError(f"{run_dir} needs config.json and model.ckpt")
    with open(cfg_path) as f:
        cfg = RunConfig.from_dict(json.load(f))
    return load_model(ckpt_path, cfg.model), cfg


def cmd_eval(args):
    model, cfg = _model_from_run_dir(args.run)
    edges = _parse_ranges(args.ranges) if args.ranges else [cfg.model.depth_min, cfg.model.depth_max + 1e-6]
    report, per_map = evaluate(model, args.data, range_edges=edges)
    out = args.out or args.run
    _write_eval_csvs(out, report, per_map)
    print(CSV_HEADER)
    print(report.csv_row())
    print(f"per-map RMSE: {[None if v is None else round(v, 4) for v in per_map]}")
    return 0


def cmd_ablate(args):
    seeds = [int(s) for s in args.seeds.split(",")]
    if not seeds:
        raise UsageError("need at least one seed")
    os.makedirs(args.out, exist_ok=True)
    base = _load_run_config(args)
    if base.d_clip is None:
        raise UsageError("ablation needs --dclip to define the out-of-range band")
    rows = []
    for seed in seeds:
        per_arm = {}
        for arm in ("on", "off"):
            cfg = RunConfig.from_dict(base.to_dict())
            cfg.seed = seed
            cfg.rel_bias_enabled = arm == "on"
            run_dir = os.path.join(args.out, f"seed{seed}_{arm}")
            start = time.time()
            result = train(cfg, run_dir)
            report, _ = evaluate(result["model"], args.test_data)
            in_rmse, out_rmse = evaluate_bands(result["model"], args.test_data, cfg.d_clip)
            per_arm[arm] = (report, in_rmse, out_rmse)
            rows.append(
                {
                    "seed": seed,
                    "rel_bias": arm,
                    "rmse": report.rmse,
                    "abs_rel": report.abs_rel,
                    "d1": report.d1,
                    "in_rmse": in_rmse,
                    "out_rmse": out_rmse,
                    "seconds": time.time() - start,
                }
            )
        print(
            f"seed {seed}: out-of-range RMSE on={per_arm['on'][2]:.4f} off={per_arm['off'][2]:.4f}"
        )
    csv_path = os.path.join(args.out, "ablate.csv")
    with open(csv_path, "w") as f:
        f.write("seed,rel_bias,rmse,abs_rel,d1,in_rmse,out_rmse\n")
        for r in rows:
            f.write(
                f"{r['seed']},{r['rel_bias']},{format(r['rmse'], '.9g')},{format(r['abs_rel'], '.9g')},"
                f"{format(r['d1'], '.9g')},{format(r['in_rmse'], '.9g')},{format(r['out_rmse'], '.9g')}\n"
            )
    deltas = []
    for seed in seeds:
        on = next(r for r in rows if r["seed"] == seed and r["rel_bias"] == "on")
        off = next(r for r in rows if r["seed"] == seed and r["rel_bias"] == "off")
        deltas.append(off["out_rmse"] - on["out_rmse"])
    wins = sum(1 for d in deltas if d > 0)
    verdict = "bias-on better out-of-range" if float(np.median(deltas)) > 0 else "no improvement"
    with open(os.path.join(args.out, "verdict.txt"), "w") as f:
        f.write(f"{verdict}: median out-RMSE delta {float(np.median(deltas)):.4f}, wins {wins}/{len(seeds)}\n")
    print(f"verdict: {verdict} ({wins}/{len(seeds)} seeds)")
    return 0


def cmd_report(args):
    series = []
    for path in args.inputs:
        buckets = []
        with open(path) as f:
            header = f.readline().strip()
            if header != RANGE_CSV_HEADER:
                raise DataError(f"{path}: expected header {RANGE_CSV_HEADER!r}, got {header!r}")
            for line in f:
                lo, hi, rmse, count = line.strip().split(",")
                buckets.append((float(lo), float(hi), float(rmse) if rmse else None, int(count)))
        label = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
        series.append((label, buckets))
    if not series:
        raise UsageError("no per-range CSVs given")
    svg = render_range_plot(series)
    with open(args.out, "w") as f:
        f.write(svg + "\n")
    print(text_table(series))
    print(f"wrote {args.out}")
    return 0


def build_parser():
    top = argparse.ArgumentParser(prog="redt", description="depth-relative attention depth estimator")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=512)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--size", default="64x64")
    g.add_argument("--sparsity", type=float, default=0.15)
    g.add_argument("--dmin", type=float, default=1.0)
    g.add_argument("--dmax", type=float, default=20.0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", default=None)
    t.add_argument("--config", default=None, help="JSON run config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--dclip", type=float, default=None)
    t.add_argument("--no-rel-bias", dest="no_rel_bias", action="store_true")
    t.add_argument("--loss-form", dest="loss_form", choices=("printed", "conventional"), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run on a dataset")
    e.add_argument("--run", required=True, help="training output directory")
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--ranges", default=None, help="comma-separated bucket edges")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="paired runs with and without the depth bias")
    a.add_argument("--data", default=None)
    a.add_argument("--test-data", dest="test_data", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default="1,2,3,4,5")
    a.add_argument("--iters", type=int, default=None)
    a.add_argument("--dclip", type=float, required=False)
    a.add_argument("--loss-form", dest="loss_form", choices=("printed", "conventional"), default=None)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render per-range CSVs into an SVG plot")
    r.add_argument("inputs", nargs="+", help="ranges.csv files")
    r.add_argument("--out", required=True, help="output SVG path")
    r.set_defaults(func=cmd_report)
    return top


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
