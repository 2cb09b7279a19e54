"""Command-line entry point: generate, ingest, train, eval, plot, baseline."""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import date

import numpy as np

from . import baselines, data, harness


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=harness.MODES)
    p.add_argument("--dataset")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--k", type=int)
    p.add_argument("--epochs-per-stage", dest="epochs_per_stage", type=int)
    p.add_argument("--cutoffs", help="comma-separated cycles per span")
    p.add_argument("--blend-fraction", dest="blend_fraction", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gru-width", dest="gru_width", type=int)
    p.add_argument("--net-width", dest="net_width", type=int)
    p.add_argument("--d-latent", dest="d_latent", type=int)
    p.add_argument("--max-step", dest="max_step", type=float)


_CONFIG_KEYS = ("mode", "dataset", "out_dir", "k", "epochs_per_stage",
                "cutoffs", "blend_fraction", "learning_rate", "lr_decay",
                "batch_size", "seed", "gru_width", "net_width", "d_latent",
                "max_step")


def _config_from_args(args):
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    overrides = {k: str(v) for k, v in overrides.items() if v is not None}
    if args.config:
        return harness.load_config(args.config, overrides)
    return harness.config_from_strings(overrides)


def build_parser():
    parser = argparse.ArgumentParser(prog="pode",
                                     description="progressive latent-ODE forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset file")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sd", type=float, default=data.DEFAULT_NOISE_SD)
    g.add_argument("--n-grid", type=int, default=1000)
    g.add_argument("--n-points", type=int, default=200)
    g.add_argument("--out", required=True)

    i = sub.add_parser("ingest", help="build a dataset from a flow CSV")
    i.add_argument("--csv", required=True)
    i.add_argument("--sensor", required=True)
    i.add_argument("--date-start")
    i.add_argument("--date-end")
    i.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a forecaster")
    _add_config_flags(t)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", help="report JSON path (default: stdout)")

    p = sub.add_parser("plot", help="emit forecast SVGs for sample ids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", required=True,
                   help="comma-separated sample indices")
    p.add_argument("--out-dir", required=True)

    b = sub.add_parser("baseline", help="score a classical baseline")
    b.add_argument("--name", required=True, choices=("static", "ha", "arima"))
    b.add_argument("--dataset", required=True)
    b.add_argument("--out", help="report JSON path (default: stdout)")

    return parser


def _cmd_generate(args):
    ds = data.gen_synthetic_suite(n=args.n, seed=args.seed,
                                  noise_sd=args.noise_sd, n_grid=args.n_grid,
                                  n_points=args.n_points)
    data.save_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} samples to {args.out}")
    return 0


def _cmd_ingest(args):
    start = date.fromisoformat(args.date_start) if args.date_start else None
    end = date.fromisoformat(args.date_end) if args.date_end else None
    ds = data.ingest_pems(args.csv, args.sensor, start, end)
    data.save_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} day-samples to {args.out}")
    return 0


def _cmd_train(args):
    config = _config_from_args(args)
    if not config.dataset:
        raise harness.HarnessError("train needs a dataset (--dataset or config)")
    _, report = harness.train(config)
    print(f"final test MSE (raw units): {report['test_mse_raw']:.6g}")
    print(f"artifacts in {config.out_dir}")
    return 0


def _cmd_eval(args):
    report = harness.evaluate_checkpoint(args.checkpoint, args.dataset)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def _cmd_plot(args):
    from .data import Normalizer
    from .model import LatentOdeModel
    from .plotting import plot_sample

    with open(args.checkpoint) as fh:
        blob = json.load(fh)
    if "normalizer" not in blob:
        raise harness.HarnessError(f"{args.checkpoint} lacks a normalizer")
    model = LatentOdeModel.load(args.checkpoint)
    norm = Normalizer(**blob["normalizer"])
    ds = data.load_dataset(args.dataset)
    os.makedirs(args.out_dir, exist_ok=True)
    for token in args.samples.split(","):
        idx = int(token)
        if not (0 <= idx < len(ds.samples)):
            raise harness.HarnessError(f"unknown sample id {idx}")
        path = os.path.join(args.out_dir, f"sample_{idx}.svg")
        plot_sample(model, ds.samples[idx], norm, path)
        print(f"wrote {path}")
    return 0


def _cmd_baseline(args):
    ds = data.load_dataset(args.dataset)
    mse, per_sample = baselines.baseline_mse(args.name, ds.test)
    report = {"baseline": args.name, "mse": mse, "per_sample": per_sample}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "plot": _cmd_plot,
    "baseline": _cmd_baseline,
}


def cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (harness.HarnessError, data.DataError, baselines.BaselineError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
