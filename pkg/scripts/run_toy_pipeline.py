#!/usr/bin/env python3
"""Generate the toy datasets and run the full MLP benchmark end to end.

Equivalent to the gen-data + report CLI calls in configs/two_gaussians_mlp.cfg,
wired up so a single command reproduces the whole table:

    python scripts/run_toy_pipeline.py --out runs/toy
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import advprune as ap
from advprune.config import load_settings
from advprune.experiment import run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/toy"))
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "two_gaussians_mlp.cfg")
    args = parser.parse_args()

    data_dir = Path("data")
    data_dir.mkdir(exist_ok=True)
    ap.generate_toy_dataset("two_gaussians", 600, noise=0.09, seed=101, path=data_dir / "tg_train.bin")
    ap.generate_toy_dataset("two_gaussians", 400, noise=0.09, seed=102, path=data_dir / "tg_test.bin")

    settings = load_settings(args.config)
    report = run_experiment(settings, args.out)
    print(f"\nreport written to {args.out / 'report.csv'}\n")
    header = f"{'method':26s} {'clean':>7s} " + " ".join(f"pgd@{eps:g}" for eps in report.epsilons)
    print(header + f" {'t/epoch':>9s} {'speedup':>8s}")
    for method, clean, robust, seconds, speedup in report.rows:
        cells = " ".join(f"{acc:8.3f}" for acc in robust)
        print(f"{method:26s} {clean:7.3f} {cells} {seconds:8.3f}s {speedup:7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
