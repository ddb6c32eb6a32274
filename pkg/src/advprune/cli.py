"""Command line front end.

Subcommands: gen-data, train, evaluate, select, track, report. The output
directory defaults to $ADVPRUNE_OUT (falling back to ./runs). Exit code 0 on
success; configuration and data errors print a structured message and exit
nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, evaluate_robust_accuracy
from .config import ConfigError, load_settings, parse_eps
from .dataio import DatasetFormatError, generate_toy_dataset, load_dataset
from .experiment import default_out_dir, model_spec_for, prepare_data, run_experiment, run_method
from .models import CheckpointFormatError, build_network, init_model, load_checkpoint
from .selection import write_selection_csv
from .trainer import TrainingDivergedError


def _add_out(parser):
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: $ADVPRUNE_OUT or ./runs)")


def _out_dir(args) -> Path:
    return args.out if args.out is not None else default_out_dir()


def cmd_gen_data(args) -> int:
    generate_toy_dataset(args.kind, args.n, args.noise, args.seed, args.path)
    print(f"wrote {args.kind} dataset with {args.n} examples to {args.path}")
    return 0


def _single_method(settings) -> str:
    if settings.selector_kind in ("full", "none"):
        return "full"
    method = f"{settings.selector_kind}@{settings.fraction}"
    return method + "+bullet" if settings.bullet is not None else method


def cmd_train(args, force_track: bool = False) -> int:
    settings = load_settings(args.config)
    if force_track:
        settings.track = True
    method = args.method or _single_method(settings)
    settings.methods = settings.methods or [method]
    train, val, test = prepare_data(settings)
    out = _out_dir(args) / method.replace("@", "_").replace("+", "_")
    result = run_method(settings, method, train, val, test, out)
    robust = ", ".join(f"{acc:.3f}" for acc in result.robust_accs)
    print(
        f"{method}: clean_acc={result.clean_acc:.3f} robust_acc=[{robust}] "
        f"time/epoch={result.time_per_epoch:.3f}s -> {out}"
    )
    return 0


def cmd_track(args) -> int:
    return cmd_train(args, force_track=True)


def cmd_evaluate(args) -> int:
    spec, params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    network = build_network(spec)
    attacks = [
        AttackSpec(epsilon=eps, alpha=args.alpha, steps=args.steps, restarts=args.restarts)
        for eps in (parse_eps(tok) for tok in args.eps)
    ]
    report = evaluate_robust_accuracy(
        network,
        params,
        dataset.features,
        dataset.labels,
        attacks,
        seed=args.seed,
        objective="margin" if args.margin else "ce",
    )
    if args.csv:
        report.write_csv(args.csv)
    print(f"clean_acc={report.clean_acc:.4f} on {report.examples} examples ({report.seconds:.1f}s)")
    for eps, acc in report.entries:
        print(f"  eps={eps:g}: robust_acc={acc:.4f}")
    return 0


def cmd_select(args) -> int:
    settings = load_settings(args.config)
    train, val, _ = prepare_data(settings)
    spec = model_spec_for(settings, train)
    network = build_network(spec)
    if args.checkpoint:
        ck_spec, params = load_checkpoint(args.checkpoint)
        if ck_spec != spec:
            raise ConfigError(f"checkpoint spec {ck_spec} does not match configured model {spec}")
    else:
        params = init_model(spec, settings.seed)

    from .selection import select_adv_glister, select_adv_gradmatch, select_random, subset_size

    selector = settings.selector_config()
    if selector is None:
        raise ConfigError("selector.kind must be random, glister or gradmatch for one-shot selection")
    rng = np.random.default_rng(settings.seed)
    if selector.kind == "random":
        sel = select_random(len(train), subset_size(selector.fraction, len(train)), rng)
    elif selector.kind == "gradmatch":
        sel = select_adv_gradmatch(network, params, train.features, train.labels, selector, rng)
    else:
        sel = select_adv_glister(
            network, params, train.features, train.labels, val.features, val.labels, selector, rng
        )
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "selection.csv"
    write_selection_csv(path, [sel])
    print(
        f"selected {len(sel.indices)} of {len(train)} examples "
        f"(objective={sel.objective:.6g}, {sel.select_seconds:.2f}s) -> {path}"
    )
    return 0


def cmd_report(args) -> int:
    settings = load_settings(args.config)
    out = _out_dir(args)
    report = run_experiment(settings, out)
    print(f"report -> {out / 'report.csv'}")
    width = max(len(row[0]) for row in report.rows)
    header = "method".ljust(width) + "  clean " + " ".join(f"pgd@{eps:g}" for eps in report.epsilons)
    print(header + "  time/epoch  speedup")
    for method, clean, robust, seconds, speedup in report.rows:
        cells = " ".join(f"{acc:7.3f}" for acc in robust)
        print(f"{method.ljust(width)}  {clean:.3f} {cells}  {seconds:9.3f}s  {speedup:6.2f}x")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy dataset file")
    p.add_argument("--kind", required=True, choices=["two_gaussians", "spiral", "checkerboard", "bars_image"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--path", type=Path, required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one method from a config file")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--method", default=None, help="override, e.g. gradmatch@0.3+bullet")
    _add_out(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("track", help="train with category tracking forced on")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--method", default=None)
    _add_out(p)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint under PGD")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eps", nargs="+", required=True, help="epsilons, e.g. 4/255 8/255 0.1")
    p.add_argument("--alpha", type=parse_eps, default=2 / 255)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", action="store_true", help="margin-loss PGD variant")
    p.add_argument("--csv", type=Path, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("select", help="one-shot subset selection dump")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    _add_out(p)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("report", help="run the configured method set and write report.csv")
    p.add_argument("--config", type=Path, required=True)
    _add_out(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DatasetFormatError, CheckpointFormatError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
