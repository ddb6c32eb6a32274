#!/usr/bin/env python3
"""Sweep the subset fraction and record robustness vs speed-up per fraction.

Produces one report row per fraction (plus the full-data baseline), the raw
material for a robustness-vs-subset-size curve:

    python scripts/fraction_sweep.py --selector gradmatch --out runs/sweep
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import advprune as ap
from advprune.config import build_settings, parse_config_text
from advprune.experiment import run_experiment

CONFIG_TEMPLATE = """
dataset = {train}
dataset.test = {test}
methods = {methods}
model.kind = mlp
loss.kind = trades
loss.beta = 1
selector.interval = 10
selector.val_fraction = 0.1
attack.train.eps = 0.08
attack.train.alpha = 0.02
attack.train.steps = 10
attack.select.steps = 5
attack.eval.eps_list = 0.08
attack.eval.steps = 50
attack.eval.restarts = 10
attack.eval.alpha = 2/255
optim.lr = 0.05
epochs = {epochs}
batch_size = 64
seed = {seed}
"""


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--selector", default="gradmatch", choices=["random", "gradmatch", "glister"])
    parser.add_argument("--fractions", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.5, 0.7])
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", type=Path, default=Path("runs/sweep"))
    args = parser.parse_args()

    data_dir = Path("data")
    data_dir.mkdir(exist_ok=True)
    train = data_dir / "tg_train.bin"
    test = data_dir / "tg_test.bin"
    ap.generate_toy_dataset("two_gaussians", 600, noise=0.09, seed=101, path=train)
    ap.generate_toy_dataset("two_gaussians", 400, noise=0.09, seed=102, path=test)

    methods = ["full"] + [f"{args.selector}@{frac}" for frac in args.fractions]
    text = CONFIG_TEMPLATE.format(
        train=train, test=test, methods=", ".join(methods), epochs=args.epochs, seed=args.seed
    )
    settings = build_settings(parse_config_text(text, source="<sweep>"))
    report = run_experiment(settings, args.out)
    print(f"report written to {args.out / 'report.csv'}")
    for method, clean, robust, seconds, speedup in report.rows:
        print(f"{method:18s} clean={clean:.3f} robust@0.08={robust[0]:.3f} t/epoch={seconds:.3f}s speedup={speedup:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
