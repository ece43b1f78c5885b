"""Command-line entry point: generate | train | eval | sweep-k | compare-losses | gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import DatasetError, generate_city, load_jsonl, save_jsonl, split_dataset
from .evaluation import emit_report, write_results_csv
from .experiments import (ExperimentConfig, build_records, compare_losses, derive_seed, evaluate_model,
                          load_config, run_training, sweep_k)
from .gradcheck import gradcheck
from .losses import LOSSES
from .trainer import TrainingError, load_checkpoint, save_checkpoint, write_training_log

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _loss_name(value: str) -> str:
    if value not in LOSSES:
        raise argparse.ArgumentTypeError(f"invalid loss {value!r}; valid losses: {', '.join(LOSSES)}")
    return value


def _common(p):
    p.add_argument("--config", help="JSON experiment config (flags override its values)")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("-o", "--out", help="output file (generate) or directory (other commands)")


def _training_flags(p):
    p.add_argument("--data", help="JSONL dataset; a synthetic city is generated when omitted")
    p.add_argument("--loss", type=_loss_name)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--metric", choices=("squared_l2", "l2"))
    p.add_argument("--threshold-m", type=float, help="geo radius for a correct retrieval (default 25)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quitlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic city as JSONL")
    _common(p)
    p.add_argument("--places", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--covisible", type=int)
    p.add_argument("--feature-dim", type=int)

    p = sub.add_parser("train", help="train an embedding network")
    _common(p)
    _training_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint with Recall@N")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="JSONL dataset; the config's city is regenerated when omitted")
    p.add_argument("--threshold-m", type=float)
    p.add_argument("--ns", type=int, nargs="*", help="recall cut-offs (default 1 5 10)")

    p = sub.add_parser("sweep-k", help="train one model per k")
    _common(p)
    _training_flags(p)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 2, 3, 4])

    p = sub.add_parser("compare-losses", help="train one model per loss")
    _common(p)
    _training_flags(p)
    p.add_argument("--losses", type=_loss_name, nargs="+", default=list(LOSSES))

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    _common(p)
    p.add_argument("--losses", type=_loss_name, nargs="+", default=list(LOSSES))
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--metric", choices=("squared_l2", "l2"), default="squared_l2")
    p.add_argument("--through-model", action="store_true", help="check parameter gradients through the MLP")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "data", None):
        cfg = replace(cfg, data=args.data)
    if args.out:
        cfg = replace(cfg, out=args.out)
    city = {}
    for flag, name in (("places", "num_places"), ("views", "views_per_place"),
                       ("covisible", "covisible_views"), ("feature_dim", "feature_dim")):
        if getattr(args, flag, None) is not None:
            city[name] = getattr(args, flag)
    if city:
        cfg = replace(cfg, city=replace(cfg.city, **city))
    train = {}
    for flag, name in (("loss", "loss"), ("k", "k"), ("lr", "lr0"), ("epochs", "max_epochs"), ("metric", "metric")):
        if getattr(args, flag, None) is not None:
            train[name] = getattr(args, flag)
    margins = {n: getattr(args, n) for n in ("alpha", "beta") if getattr(args, n, None) is not None}
    if margins:
        train["margins"] = replace(cfg.train.margins, **margins)
    if train:
        cfg = replace(cfg, train=replace(cfg.train, **train))
    if getattr(args, "threshold_m", None) is not None:
        cfg = replace(cfg, threshold_m=args.threshold_m)
    if getattr(args, "ns", None) is not None:
        cfg = replace(cfg, eval_ns=tuple(args.ns))
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def cmd_generate(cfg: ExperimentConfig, args) -> None:
    if not args.out:
        raise UsageError("generate needs -o/--out FILE")
    path = Path(args.out)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")
    seeded = cfg.seeded()
    records = split_dataset(generate_city(seeded.city), cfg.split_fractions, derive_seed(cfg.seed, "split"))
    save_jsonl(records, path)
    counts = {}
    for r in records:
        counts[r.split] = counts.get(r.split, 0) + 1
    places = len({r.place_id for r in records})
    print(f"wrote {len(records)} records ({places} places) to {path}: "
          + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))


def cmd_train(cfg: ExperimentConfig, args) -> None:
    out = _out_dir(cfg)
    records = build_records(cfg)
    ckpt, rows = run_training(cfg, records)
    save_checkpoint(ckpt, out / "checkpoint.json")
    write_training_log(rows, out / "train_log.csv")
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"version": cfg.version, **cfg.to_dict()}, fh, indent=1, default=str)
    print(f"{cfg.train.loss} k={cfg.train.k}: {len(rows)} epochs, best epoch {ckpt.epoch}, "
          f"val Recall@1 {ckpt.best_val_recall1:.4f} -> {out / 'checkpoint.json'}")


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    out = _out_dir(cfg)
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} not found")
    ckpt = load_checkpoint(args.checkpoint)
    cfg = replace(cfg, train=replace(cfg.train, metric=ckpt.train_config.metric))
    records = build_records(cfg)
    report = evaluate_model(ckpt.model, records, cfg, ckpt.train_config.loss, ckpt.train_config.k)
    emit_report(report, out / "report.json", "json")
    emit_report(report, out / "report.csv", "csv")
    recalls = ", ".join(f"R@{n}={v:.4f}" for n, v in report.recall_at.items())
    print(f"{report.num_queries} queries, threshold {report.distance_threshold_m:g} m: {recalls}")


def cmd_sweep_k(cfg: ExperimentConfig, args) -> None:
    out = _out_dir(cfg)
    reports = sweep_k(cfg, args.ks)
    write_results_csv(reports, out / "sweep_k.csv")
    print((out / "sweep_k.csv").read_text(), end="")


def cmd_compare_losses(cfg: ExperimentConfig, args) -> None:
    out = _out_dir(cfg)
    reports = compare_losses(cfg, args.losses)
    write_results_csv(reports, out / "compare_losses.csv")
    print((out / "compare_losses.csv").read_text(), end="")


def cmd_gradcheck(cfg: ExperimentConfig, args, perturb=None) -> bool:
    seed = cfg.seed
    margins = cfg.train.margins
    print(f"{'loss':<14}{'max_rel_err':>14}{'tol':>9}{'skipped':>9}  result")
    ok = True
    for name in args.losses:
        r = gradcheck(name, args.trials, seed, args.through_model, args.metric, cfg.train.k, margins, perturb)
        ok &= r.passed
        print(f"{name:<14}{r.max_rel_error:>14.3e}{r.tol:>9.0e}{r.skipped:>9}  {'pass' if r.passed else 'FAIL'}")
    return ok


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-k": cmd_sweep_k,
    "compare-losses": cmd_compare_losses,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gradcheck":
            return 0 if cmd_gradcheck(cfg, args) else EXIT_RUNTIME
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"quitlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        if isinstance(exc, DatasetError):
            print(f"quitlab: data error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"quitlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TrainingError, RuntimeError) as exc:
        print(f"quitlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
