"""Experiment orchestration: train a set of methods, evaluate, emit a report.

A method string is ``full`` or ``<selector>@<fraction>`` with an optional
``+bullet`` suffix, e.g. ``gradmatch@0.3+bullet``. Every method trains from
the same seed on the same data, gets evaluated with the configured attack
ladder (PGD-50-10 by default), and lands as one row in the report with a
steady-state time-per-epoch and its speed-up against the full-data baseline.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import evaluate_robust_accuracy
from .bullet import BudgetPolicy, write_tracking_csv
from .config import ConfigError, ExperimentSettings
from .dataio import Dataset, load_dataset, split_train_val
from .models import ModelSpec, build_network, init_model, save_checkpoint
from .selection import write_selection_csv
from .trainer import (
    TrainResult,
    adversarial_train,
    steady_state_epoch_seconds,
    write_metrics_csv,
)


@dataclass
class MethodResult:
    name: str
    result: TrainResult
    clean_acc: float
    robust_accs: tuple[float, ...]
    time_per_epoch: float


@dataclass
class ExperimentReport:
    epsilons: tuple[float, ...]
    rows: list[tuple[str, float, tuple[float, ...], float, float]]
    # (method, clean_acc, robust per epsilon, time/epoch, speed-up)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["method", "clean_acc"]
            header += [f"robust_acc@{eps:g}" for eps in self.epsilons]
            header += ["time_per_epoch_s", "speedup"]
            writer.writerow(header)
            for method, clean, robust, seconds, speedup in self.rows:
                writer.writerow([method, repr(clean)] + [repr(r) for r in robust] + [repr(seconds), repr(speedup)])


def read_report_csv(path) -> ExperimentReport:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        eps = tuple(float(col.split("@", 1)[1]) for col in header if col.startswith("robust_acc@"))
        rows = []
        for row in reader:
            method, clean = row[0], float(row[1])
            robust = tuple(float(v) for v in row[2 : 2 + len(eps)])
            seconds, speedup = float(row[-2]), float(row[-1])
            rows.append((method, clean, robust, seconds, speedup))
    return ExperimentReport(eps, rows)


def parse_method(token: str) -> tuple[str, float | None, bool]:
    """'(full|random|glister|gradmatch)[@fraction][+bullet]' -> parts."""
    bullet = token.endswith("+bullet")
    body = token[: -len("+bullet")] if bullet else token
    if "@" in body:
        kind, frac_text = body.split("@", 1)
        try:
            fraction = float(frac_text)
        except ValueError as exc:
            raise ConfigError(f"method {token!r}: bad fraction {frac_text!r}") from exc
    else:
        kind, fraction = body, None
    kind = kind.strip()
    if kind not in ("full", "random", "glister", "gradmatch"):
        raise ConfigError(f"method {token!r}: unknown selector {kind!r}")
    if kind != "full" and fraction is None:
        raise ConfigError(f"method {token!r}: selector methods need a fraction like {kind}@0.3")
    return kind, fraction, bullet


def model_spec_for(settings: ExperimentSettings, dataset: Dataset) -> ModelSpec:
    if settings.model_kind == "mlp":
        return ModelSpec("mlp", dataset.feature_shape, classes=dataset.classes)
    if settings.model_kind == "tiny_cnn":
        return ModelSpec("tiny_cnn", dataset.feature_shape, classes=dataset.classes)
    raise ConfigError(f"key 'model.kind': unknown model {settings.model_kind!r}")


def run_method(
    settings: ExperimentSettings,
    method: str,
    train: Dataset,
    val: Dataset | None,
    eval_set: Dataset | None,
    out_dir: Path | None = None,
) -> MethodResult:
    """Train one method end to end and evaluate it with the full attack ladder."""
    kind, fraction, bullet_on = parse_method(method)
    selector = settings.selector_config(kind=kind, fraction=fraction)
    if selector is not None and selector.kind == "glister" and (val is None or len(val) == 0):
        raise ConfigError(f"method {method!r} needs a validation split (selector.val_fraction > 0)")
    bullet = None
    if bullet_on:
        bullet = settings.bullet if settings.bullet is not None else BudgetPolicy()
    cfg = settings.train_config(selector, bullet)

    spec = model_spec_for(settings, train)
    network = build_network(spec)
    params0 = init_model(spec, cfg.seed)
    eval_x = eval_set.features if eval_set is not None else None
    eval_y = eval_set.labels if eval_set is not None else None
    checkpoint_fn = None
    if out_dir is not None and settings.checkpoint_interval > 0:
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_fn = lambda epoch, p: save_checkpoint(out_dir / f"model_epoch{epoch + 1}.ckpt", spec, p)
    result = adversarial_train(
        network,
        params0,
        train.features,
        train.labels,
        cfg,
        val_x=val.features if val is not None else None,
        val_y=val.labels if val is not None else None,
        eval_x=eval_x,
        eval_y=eval_y,
        checkpoint_fn=checkpoint_fn,
        checkpoint_interval=settings.checkpoint_interval or None,
    )

    final_eval = eval_set if eval_set is not None else train
    report = evaluate_robust_accuracy(
        network,
        result.params,
        final_eval.features,
        final_eval.labels,
        list(settings.eval_attacks),
        seed=cfg.seed + 1,
    )
    robust = tuple(acc for _, acc in report.entries)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        eps = tuple(a.epsilon for a in settings.eval_attacks)
        write_metrics_csv(out_dir / "metrics.csv", result.metrics, eps)
        if result.selections:
            write_selection_csv(out_dir / "selections.csv", result.selections)
        if result.tracking:
            write_tracking_csv(out_dir / "tracking.csv", result.tracking)
        report.write_csv(out_dir / "robustness.csv")
        save_checkpoint(out_dir / "model.ckpt", spec, result.params)

    return MethodResult(
        name=method,
        result=result,
        clean_acc=report.clean_acc,
        robust_accs=robust,
        time_per_epoch=steady_state_epoch_seconds(result.metrics),
    )


def prepare_data(settings: ExperimentSettings) -> tuple[Dataset, Dataset | None, Dataset | None]:
    """Load the training file, carve the validation split, load the test file."""
    full = load_dataset(settings.dataset_path)
    needs_val = settings.val_fraction > 0 and (
        any(parse_method(m)[0] == "glister" for m in settings.methods) or settings.selector_kind == "glister"
    )
    if needs_val:
        train, val = split_train_val(full, settings.val_fraction, settings.seed)
    else:
        train, val = full, None
    test = load_dataset(settings.test_path) if settings.test_path else None
    return train, val, test


def run_experiment(settings: ExperimentSettings, out_dir) -> ExperimentReport:
    """Run every configured method and write report.csv plus per-method files.

    Speed-ups are steady-state median epoch seconds relative to the ``full``
    baseline (or the first method when no full row is present).
    """
    if not settings.methods:
        raise ConfigError("key 'methods': need at least one method to run an experiment")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, val, test = prepare_data(settings)

    results = []
    for method in settings.methods:
        sub = out_dir / method.replace("@", "_").replace("+", "_")
        results.append(run_method(settings, method, train, val, test, sub))

    baseline = next((r for r in results if r.name == "full"), results[0])
    rows = []
    for r in results:
        speedup = baseline.time_per_epoch / r.time_per_epoch if r.time_per_epoch > 0 else float("inf")
        if r is baseline:
            speedup = 1.0
        rows.append((r.name, r.clean_acc, r.robust_accs, r.time_per_epoch, speedup))
    report = ExperimentReport(tuple(a.epsilon for a in settings.eval_attacks), rows)
    report.write_csv(out_dir / "report.csv")
    return report


def default_out_dir() -> Path:
    return Path(os.environ.get("ADVPRUNE_OUT", "runs"))
