"""Command-line entry point: ``gisnet ingest | synth | train | eval | predict``.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path


from .config import ConfigError, RunConfig
from .data import SCENARIOS, FormatError, generate_synthetic, parse_trajectory_csv, samples_from_records, split_dataset
from .kalman import cv_kalman_baseline
from .model import forward, grid_spec
from .plotting import plot_prediction
from .storage import StorageError, load_checkpoint, load_dataset, manifest_path, save_checkpoint, save_dataset
from .train import InvariantError, evaluate_baseline, evaluate_rmse, format_log_line, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

# Published NGSIM results, shown for orientation only.
REFERENCE_RMSE = (0.33, 0.83, 1.42, 2.14, 3.23)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(path) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    return cfg.with_seed_from_env()


def _out(line: str = "") -> None:
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


def _print_counts(manifest: dict) -> None:
    c = manifest["counts"]
    _out(f"samples: train {c['train']}  val {c['val']}  test {c['test']}  (config {manifest['config_hash'][:12]})")


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args) -> int:
    cfg = _config(args.config)
    grid = grid_spec(cfg)
    samples = []
    for path in args.input:
        records = parse_trajectory_csv(path, cfg.data.feet_to_meters)
        samples.extend(samples_from_records(records, cfg.data, grid, source=Path(path).name))
    split = split_dataset(samples, cfg.seed, cfg.data.split_ratios)
    _print_counts(save_dataset(args.out, split, cfg))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    if args.scenes < 1:
        raise UsageError("--scenes must be at least 1")
    samples = generate_synthetic(args.scenario, args.scenes, cfg.seed, args.noise, cfg.data, grid_spec(cfg))
    split = split_dataset(samples, cfg.seed, cfg.data.split_ratios)
    _print_counts(save_dataset(args.out, split, cfg))
    return EXIT_OK


def _cache_config(data_path) -> RunConfig:
    mpath = manifest_path(data_path)
    if not mpath.exists():
        raise DataError(f"{mpath}: manifest missing")
    return RunConfig.from_dict(json.loads(mpath.read_text())["config"])


def cmd_train(args) -> int:
    split, cache_hash = load_dataset(args.data)
    cfg = RunConfig.load(args.config) if args.config else _cache_config(args.data)
    cfg = cfg.with_seed_from_env()
    overrides = {k: v for k, v in (("lr", args.lr), ("epochs", args.epochs)) if v is not None}
    if overrides:
        cfg = replace(cfg, train=replace(cfg.train, **overrides))
    if cfg.hash() != cache_hash:
        raise DataError(
            f"config hash {cfg.hash()[:12]} does not match dataset cache {cache_hash[:12]}; "
            "rebuild the cache with this config or train with the cache's config"
        )
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:

        def on_epoch(entry):
            line = format_log_line(entry)
            _out(line)
            fh.write(line + "\n")
            fh.flush()

        result = train_loop(split.train, split.val, cfg, on_epoch=on_epoch, on_improve=lambda p: save_checkpoint(args.out, p))
    save_checkpoint(args.out, result.params)
    _out(f"best epoch {result.best_epoch}; checkpoint {args.out}")
    return EXIT_OK


def _load_pair(data_path, ckpt_path):
    split, cache_hash = load_dataset(data_path)
    params = load_checkpoint(ckpt_path)
    if params.config.hash() != cache_hash:
        raise DataError(
            f"refusing to evaluate: checkpoint config {params.config.hash()[:12]} differs from "
            f"dataset cache config {cache_hash[:12]} (architecture or data protocol changed)"
        )
    return split, params


def format_table(model_report, baseline_report=None, split_name: str = "test") -> str:
    """Horizons as rows, one column per model, published values in the footer."""
    buf = io.StringIO()
    cols = ["model"] + (["CV Kalman"] if baseline_report else [])
    buf.write(f"RMSE (m), {split_name} split, {model_report.count} samples, config {model_report.config_hash[:12]}\n")
    buf.write(f"{'horizon':<9}" + "".join(f"{c:>11}" for c in cols) + "\n")
    for i, h in enumerate(model_report.horizons):
        row = [model_report.rmse[i]] + ([baseline_report.rmse[i]] if baseline_report else [])
        buf.write(f"{f'{h} s':<9}" + "".join(f"{v:>11.4f}" for v in row) + "\n")
    ref = "/".join(f"{v:.2f}" for v in REFERENCE_RMSE)
    buf.write(
        f"reference: published GISNet on NGSIM {ref} m at 1-5 s; "
        "needs full NGSIM training, not reproducible at desk scale\n"
    )
    return buf.getvalue()


def cmd_eval(args) -> int:
    split, params = _load_pair(args.data, args.ckpt)
    samples = split.part(args.split)
    if not samples:
        raise DataError(f"{args.split} split is empty")
    report = evaluate_rmse(samples, params)
    base = evaluate_baseline(samples, params.config) if args.baseline == "cv" else None
    table = format_table(report, base, args.split)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    return EXIT_OK


def cmd_predict(args) -> int:
    split, params = _load_pair(args.data, args.ckpt)
    samples = split.part(args.split)
    if not 0 <= args.sample < len(samples):
        raise UsageError(f"--sample {args.sample} out of range; {args.split} split has {len(samples)} samples")
    s = samples[args.sample]
    pred = forward(s, params) + s.origin
    truth = s.future + s.origin
    csv_path = Path(args.csv) if args.csv else Path(args.plot).with_suffix(".csv")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t_s", "pred_x", "pred_y", "true_x", "true_y"])
        for k in range(len(pred)):
            t = (k + 1) * params.config.data.dt
            w.writerow([k + 1, f"{t:.1f}", *(repr(float(v)) for v in (pred[k, 0], pred[k, 1], truth[k, 0], truth[k, 1]))])
    if args.baseline == "cv":
        cv = cv_kalman_baseline(s, params.config.data, params.config.kalman) + s.origin
        _out(f"cv final position ({cv[-1, 0]:.3f}, {cv[-1, 1]:.3f})")
    title = f"{s.source} vehicle {s.vehicle_id} frame {s.anchor_frame}"
    plot_prediction(args.plot, s.history, pred, truth, params.config.data.lane_width, title)
    _out(f"wrote {csv_path} and {args.plot}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gisnet", description="Trajectory prediction with graph-convolutional information sharing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="parse NGSIM-format CSV files into a dataset cache")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a synthetic scenario dataset cache")
    s.add_argument("--scenario", required=True, help=", ".join(SCENARIOS))
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--seed", type=int, help="overrides config and GISNET_SEED")
    s.add_argument("--noise", type=float, default=0.1, help="positional noise std on history (m)")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train on a dataset cache")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="defaults to the config stored with the cache")
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--log", help="JSON-lines log path (default <out>.log.jsonl)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="RMSE table at 1-5 s horizons")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--baseline", choices=["cv"])
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--out", help="also write the table here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="predict one sample, write CSV and SVG")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--sample", type=int, required=True)
    s.add_argument("--plot", required=True)
    s.add_argument("--csv", help="default: plot path with .csv suffix")
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--baseline", choices=["cv"])
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, StorageError, ConfigError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
