"""Command-line interface: train, eval, predict, tile, synth, render-diff,
params, verify."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as dio
from . import selfcheck
from .config import TrainConfig, load_config
from .model import BGINet
from .synth import SynthConfig, synth_generate
from .train import Checkpoint, count_params, evaluate, predict, train


def _cmd_train(args):
    cfg = load_config(args.config)
    if args.data:
        cfg.data_dir = args.data
    ckpt = train(cfg, log=print)
    ckpt.save(args.out)
    print(f"saved checkpoint to {args.out} "
          f"(epoch {ckpt.epoch}, val F1 {ckpt.best_val_f1:.2f})")


def _cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    records = dio.load_records(Path(args.data) / args.split)
    text, payload = evaluate(ckpt, records, threshold=args.threshold,
                             dump_dir=args.dump)
    print(text, end="")
    if args.report:
        from .metrics import ConfusionCounts, write_report
        counts = ConfusionCounts(tp=payload["tp"], fp=payload["fp"],
                                 fn=payload["fn"], tn=payload["tn"])
        write_report(args.report, counts,
                     extra={"tiles": payload["tiles"],
                            "threshold": payload["threshold"]})
        print(f"report written to {args.report} and {args.report}.json")


def _cmd_predict(args):
    ckpt = Checkpoint.load(args.ckpt)
    img1 = np.asarray(Image.open(args.a).convert("RGB"), dtype=np.uint8)
    img2 = np.asarray(Image.open(args.b).convert("RGB"), dtype=np.uint8)
    cm = predict(ckpt, img1, img2)
    binary = (cm.probabilities >= args.threshold).astype(np.uint8) * 255
    dio.write_png(args.out, binary)
    prob_path = str(args.out) + ".prob.npy"
    np.save(prob_path, cm.probabilities)
    print(f"wrote {args.out} and {prob_path}")


def _cmd_tile(args):
    records = dio.load_records(args.data)
    tiles = []
    for rec in records:
        tiles.extend(dio.tile(rec, size=args.size, stride=args.stride))
    dio.save_records(tiles, args.out)
    print(f"wrote {len(tiles)} tiles from {len(records)} scenes to {args.out}")


def _cmd_synth(args):
    n_pairs = args.train + args.val + args.test
    cfg = SynthConfig(
        canvas_size=args.canvas, n_pairs=n_pairs, seed=args.seed,
        n_true_changes=args.changes, noise_std=args.noise_std,
        pseudo_brightness=not args.no_pseudo_brightness,
        pseudo_tint=not args.no_pseudo_tint,
        pseudo_shadow=not args.no_pseudo_shadow,
    )
    records = synth_generate(cfg)
    ratios = (args.train, args.val, args.test)
    train_r, val_r, test_r = dio.split(records, ratios, seed=cfg.seed)
    for name, recs in (("train", train_r), ("val", val_r), ("test", test_r)):
        if recs:
            dio.save_records(recs, Path(args.out) / name)
    print(f"wrote {len(train_r)}/{len(val_r)}/{len(test_r)} "
          f"train/val/test pairs to {args.out}")


def _cmd_render_diff(args):
    pred = np.asarray(Image.open(args.pred).convert("L")) > 127
    gt = np.asarray(Image.open(args.gt).convert("L")) > 127
    dio.write_png(args.out, dio.render_comparison_map(pred, gt))
    print(f"wrote {args.out}")


def _cmd_params(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    net = BGINet(cfg.model, rng=np.random.default_rng(0))
    total = count_params(net)
    groups: dict[str, int] = {}
    for k, v in net.params.items():
        groups.setdefault(k.split(".")[0], 0)
        groups[k.split(".")[0]] += v.size
    for g, n in sorted(groups.items()):
        print(f"{g:8s} {n:>12,d}")
    print(f"{'total':8s} {total:>12,d}")


def _cmd_verify(args):
    rows = selfcheck.run_verification(full_model=not args.skip_full_model)
    print(selfcheck.format_rows(rows))
    if not all(passed for _, passed, _ in rows):
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphcd",
                                description="Bitemporal change detection with "
                                            "graph-space feature interaction")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default="checkpoint.npz")
    t.add_argument("--data", default="", help="override data_dir from the config")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--dump", default=None, help="directory for per-tile maps")
    e.add_argument("--report", default=None, help="write text + JSON report here")
    e.set_defaults(func=_cmd_eval)

    pr = sub.add_parser("predict", help="predict a change map for one pair")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--a", required=True)
    pr.add_argument("--b", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.set_defaults(func=_cmd_predict)

    ti = sub.add_parser("tile", help="crop a dataset directory into tiles")
    ti.add_argument("--data", required=True, help="directory with A/, B/, label/")
    ti.add_argument("--out", required=True)
    ti.add_argument("--size", type=int, default=256)
    ti.add_argument("--stride", type=int, default=256)
    ti.set_defaults(func=_cmd_tile)

    sy = sub.add_parser("synth", help="generate a synthetic dataset")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", required=True)
    sy.add_argument("--train", type=int, default=200)
    sy.add_argument("--val", type=int, default=40)
    sy.add_argument("--test", type=int, default=40)
    sy.add_argument("--canvas", type=int, default=64)
    sy.add_argument("--changes", type=int, default=2)
    sy.add_argument("--noise-std", type=float, default=2.0)
    sy.add_argument("--no-pseudo-brightness", action="store_true")
    sy.add_argument("--no-pseudo-tint", action="store_true")
    sy.add_argument("--no-pseudo-shadow", action="store_true")
    sy.set_defaults(func=_cmd_synth)

    rd = sub.add_parser("render-diff", help="color-coded prediction/label map")
    rd.add_argument("--pred", required=True)
    rd.add_argument("--gt", required=True)
    rd.add_argument("--out", required=True)
    rd.set_defaults(func=_cmd_render_diff)

    pa = sub.add_parser("params", help="parameter counts for a config")
    pa.add_argument("--config", default=None)
    pa.set_defaults(func=_cmd_params)

    ve = sub.add_parser("verify", help="run oracle and gradient verification")
    ve.add_argument("--skip-full-model", action="store_true",
                    help="skip the slow full-model finite-difference check")
    ve.set_defaults(func=_cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
