"""Adversarial training loop with periodic subset re-selection.

The schedule: epoch 0 starts from a random subset (or the full set when no
selector is configured), and the configured selector re-runs at epochs R,
2R, ... strictly inside the run. Per batch, adversaries are generated at the
training budget (or per-category budgets when a BudgetPolicy is active), the
configured loss is backpropagated with subset weights folded into the batch
mean, and plain SGD with momentum and weight decay applies the update.

Randomness is split into independent streams (selection, shuffling, attack
noise, probe noise, metric evaluation), all derived from the single run
seed, so e.g. running a selector does not perturb the shuffling sequence.
Timing separates selection from training; the categorization probe counts
as training time only when it feeds a budget policy.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackSpec, pgd_attack
from .autodiff import Network, NonFiniteLossError, ParamSet
from .bullet import (
    BudgetPolicy,
    CategoryCounts,
    allocate_attack_budget,
    categorize_examples,
    default_probe,
)
from .losses import LossConfig, ce_with_grads, kl_with_grads, mart_with_grads, trades_with_grads
from .selection import (
    SelectorConfig,
    SubsetSelection,
    select_adv_glister,
    select_adv_gradmatch,
    select_random,
    subset_size,
)


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    loss: LossConfig
    train_attack: AttackSpec
    eval_attacks: tuple[AttackSpec, ...] = ()
    selector: SelectorConfig | None = None  # None trains on the full set
    selection_interval: int = 20
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 2e-4
    lr_milestones: tuple[float, float] = (0.5, 0.75)  # fractions of the run
    bullet: BudgetPolicy | None = None
    track: bool = True
    seed: int = 0
    metrics_steps: int = 10  # per-epoch robustness probe budget
    metrics_max_examples: int = 512

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.selection_interval < 1:
            raise ValueError("selection_interval must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    clean_acc: float
    robust_accs: tuple[float, ...]  # aligned with cfg.eval_attacks
    epoch_seconds: float
    selection_seconds: float = 0.0
    selection_objective: float | None = None
    counts: CategoryCounts | None = None


@dataclass
class TrainResult:
    params: ParamSet
    metrics: list[EpochMetrics]
    selections: list[SubsetSelection]
    tracking: list[tuple[int, CategoryCounts]]


def sgd_update(
    params: ParamSet,
    grads: dict[str, np.ndarray],
    velocity: ParamSet,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[ParamSet, ParamSet]:
    """v <- momentum*v + g + wd*theta; theta <- theta - lr*v. In place."""
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {theta.shape}")
        v = velocity[name]
        v *= momentum
        v += g + weight_decay * theta
        theta -= (lr * v).astype(theta.dtype)
    return params, velocity


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise constant: x0.1 at the first milestone, x0.01 at the second."""
    first, second = (int(np.ceil(m * cfg.epochs)) for m in cfg.lr_milestones)
    if epoch >= second:
        return cfg.lr0 * 0.01
    if epoch >= first:
        return cfg.lr0 * 0.1
    return cfg.lr0


def selection_schedule(epoch: int, interval: int, total_epochs: int) -> bool:
    """Selection fires at epochs R, 2R, ... strictly below total_epochs."""
    return 0 < epoch < total_epochs and epoch % interval == 0


def selection_epochs(interval: int, total_epochs: int) -> list[int]:
    return [e for e in range(total_epochs) if selection_schedule(e, interval, total_epochs)]


def training_loss_grads(
    network: Network,
    params: ParamSet,
    x_clean: np.ndarray,
    x_adv: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None,
    kind: str,
    beta: float = 1.0,
    lam: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and parameter gradients for one (clean, adversarial) batch.

    "ce" needs only the adversarial pass; "kl", "trades" and "mart"
    backpropagate through both forward passes and sum the gradients.
    """
    if kind == "ce":
        logits_a, caches_a = network.forward_with_cache(params, x_adv)
        value, dadv = ce_with_grads(logits_a, labels, weights)
        _, grads = network.backward(params, dadv, caches_a)
        return value, grads

    logits_c, caches_c = network.forward_with_cache(params, x_clean)
    logits_a, caches_a = network.forward_with_cache(params, x_adv)
    if kind == "kl":
        value, dclean, dadv = kl_with_grads(logits_c, logits_a, weights)
    elif kind == "trades":
        value, dclean, dadv = trades_with_grads(logits_c, logits_a, labels, beta, weights)
    elif kind == "mart":
        value, dclean, dadv = mart_with_grads(logits_c, logits_a, labels, lam, weights)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    _, grads_c = network.backward(params, dclean, caches_c)
    _, grads_a = network.backward(params, dadv, caches_a)
    grads = {name: grads_c[name] + grads_a[name] for name in grads_c}
    return value, grads


def _attack_objective_kind(loss_kind: str) -> str:
    # TRADES perturbs against the KL term; CE and MART attack cross-entropy.
    return "kl" if loss_kind == "trades" else "ce"


def _generate_adversaries(network, params, x, y, attack, budgets, rng, objective):
    if budgets is None:
        return pgd_attack(network, params, x, y, attack, rng, objective)
    adv = x.copy()
    for steps in np.unique(budgets):
        mask = budgets == steps
        if steps == 0:
            continue  # zero budget trains on the clean example
        spec = replace(attack, steps=int(steps))
        adv[mask] = pgd_attack(network, params, x[mask], y[mask], spec, rng, objective)
    return adv


def _run_selector(network, params, cfg, train_x, train_y, val_x, val_y, sel_rng):
    sel = cfg.selector
    n = len(train_x)
    k = subset_size(sel.fraction, n)
    if sel.kind == "random":
        return select_random(n, k, sel_rng)
    if sel.kind == "gradmatch":
        return select_adv_gradmatch(network, params, train_x, train_y, sel, sel_rng)
    if val_x is None or len(val_x) == 0:
        raise ValueError("glister selection requires a validation set")
    return select_adv_glister(network, params, train_x, train_y, val_x, val_y, sel, sel_rng)


def adversarial_train(
    network: Network,
    init_params: ParamSet,
    train_x: np.ndarray,
    train_y: np.ndarray,
    cfg: TrainConfig,
    val_x: np.ndarray | None = None,
    val_y: np.ndarray | None = None,
    eval_x: np.ndarray | None = None,
    eval_y: np.ndarray | None = None,
    checkpoint_fn=None,
    checkpoint_interval: int | None = None,
) -> TrainResult:
    """Run the min-max loop and return final parameters plus per-epoch records.

    ``eval_x/eval_y`` feed the per-epoch accuracy columns (defaulting to a
    fixed slice of the training set); the cheap per-epoch robustness probe
    uses ``cfg.metrics_steps`` single-restart PGD at each evaluation epsilon
    and runs outside the training timer.
    """
    n = len(train_x)
    if n < cfg.batch_size:
        raise ValueError(f"dataset of {n} examples is smaller than batch_size {cfg.batch_size}")
    if cfg.selector is not None and cfg.selector.kind == "glister" and (val_x is None or len(val_x) == 0):
        raise ValueError("glister selection requires a validation set")

    streams = np.random.SeedSequence(cfg.seed).spawn(5)
    sel_rng, shuffle_rng, attack_rng, probe_rng, metric_rng = (np.random.default_rng(s) for s in streams)

    params = init_params.copy()
    velocity = params.zeros_like()

    if eval_x is None:
        eval_x = train_x[: cfg.metrics_max_examples]
        eval_y = train_y[: cfg.metrics_max_examples]
    else:
        eval_x = eval_x[: cfg.metrics_max_examples]
        eval_y = eval_y[: cfg.metrics_max_examples]
    metric_attacks = tuple(
        replace(a, steps=min(a.steps, cfg.metrics_steps), restarts=1) for a in cfg.eval_attacks
    )

    if cfg.selector is None:
        active_idx = np.arange(n)
        active_w = np.ones(n)
    else:
        initial = select_random(n, subset_size(cfg.selector.fraction, n), sel_rng)
        active_idx, active_w = initial.indices, initial.weights

    attack_objective = _attack_objective_kind(cfg.loss.kind)
    probe = default_probe(cfg.train_attack)
    metrics: list[EpochMetrics] = []
    selections: list[SubsetSelection] = []
    tracking: list[tuple[int, CategoryCounts]] = []

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)

        selection_seconds = 0.0
        selection_objective = None
        if cfg.selector is not None and selection_schedule(epoch, cfg.selection_interval, cfg.epochs):
            selection = _run_selector(network, params, cfg, train_x, train_y, val_x, val_y, sel_rng)
            selection.round_epoch = epoch
            selections.append(selection)
            active_idx, active_w = selection.indices, selection.weights
            selection_seconds = selection.select_seconds
            selection_objective = selection.objective

        counts = None
        budgets = None
        probe_seconds = 0.0
        if cfg.bullet is not None or cfg.track:
            t_probe = time.perf_counter()
            categories, counts = categorize_examples(
                network, params, train_x[active_idx], train_y[active_idx], probe, probe_rng
            )
            probe_seconds = time.perf_counter() - t_probe
            tracking.append((epoch, counts))
            if cfg.bullet is not None:
                budgets = allocate_attack_budget(categories, cfg.bullet)

        t_train = time.perf_counter()
        order = shuffle_rng.permutation(len(active_idx))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[start : start + cfg.batch_size]
            pick = active_idx[rows]
            x, y, w = train_x[pick], train_y[pick], active_w[rows]
            if w.sum() <= 0:
                continue  # all-zero weights contribute nothing
            adv = _generate_adversaries(
                network, params, x, y, cfg.train_attack, None if budgets is None else budgets[rows], attack_rng, attack_objective
            )
            loss, grads = training_loss_grads(
                network, params, x, adv, y, w, cfg.loss.kind, cfg.loss.beta, cfg.loss.lambda_mart
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            sgd_update(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            batch_losses.append(loss)
        epoch_seconds = time.perf_counter() - t_train
        if cfg.bullet is not None:
            epoch_seconds += probe_seconds  # the probe is part of the method's cost

        clean_acc, robust_accs = _epoch_eval(network, params, eval_x, eval_y, metric_attacks, metric_rng)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=float(np.mean(batch_losses)) if batch_losses else float("nan"),
                clean_acc=clean_acc,
                robust_accs=robust_accs,
                epoch_seconds=epoch_seconds,
                selection_seconds=selection_seconds,
                selection_objective=selection_objective,
                counts=counts,
            )
        )
        if checkpoint_fn is not None and checkpoint_interval and (epoch + 1) % checkpoint_interval == 0:
            checkpoint_fn(epoch, params)

    return TrainResult(params, metrics, selections, tracking)


def _epoch_eval(network, params, eval_x, eval_y, metric_attacks, rng):
    preds = network.forward(params, eval_x).argmax(axis=1)
    clean_acc = float((preds == eval_y).mean())
    robust = []
    for spec in metric_attacks:
        adv = pgd_attack(network, params, eval_x, eval_y, spec, rng, objective="ce")
        robust.append(float((network.forward(params, adv).argmax(axis=1) == eval_y).mean()))
    return clean_acc, tuple(robust)


def steady_state_epoch_seconds(metrics: list[EpochMetrics]) -> float:
    """Median training-phase seconds, skipping the warmup epoch when possible."""
    times = [m.epoch_seconds for m in metrics]
    if len(times) > 1:
        times = times[1:]
    return float(np.median(times))


def write_metrics_csv(path, metrics: list[EpochMetrics], eval_epsilons: tuple[float, ...]) -> None:
    header = ["epoch", "train_loss", "clean_acc"]
    header += [f"robust_acc@{eps:g}" for eps in eval_epsilons]
    header += ["epoch_seconds", "selection_seconds", "selection_objective", "n_outlier", "n_boundary", "n_robust"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for m in metrics:
            row = [m.epoch, repr(m.train_loss), repr(m.clean_acc)]
            row += [repr(acc) for acc in m.robust_accs]
            row += [repr(m.epoch_seconds), repr(m.selection_seconds)]
            row += ["" if m.selection_objective is None else repr(m.selection_objective)]
            if m.counts is None:
                row += ["", "", ""]
            else:
                row += [m.counts.n_outlier, m.counts.n_boundary, m.counts.n_robust]
            writer.writerow(row)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            row = {}
            for key, value in raw.items():
                if value == "":
                    row[key] = None
                elif key.startswith(("epoch", "n_")) and not key.endswith("seconds"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows
