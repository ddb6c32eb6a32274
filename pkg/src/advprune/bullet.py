"""Example categorization and per-category attack budgets.

A cheap probe attack (PGD-5, one restart, by default) splits examples into
three buckets: *outlier* (already misclassified clean), *boundary* (clean
correct, probe flips it), *robust* (correct under both). A budget policy
then assigns the number of training-attack steps per bucket, spending the
expensive multi-step adversary only where it can matter. Per-epoch bucket
counts are also the tracking signal written to the tracking CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attacks import AttackSpec, pgd_attack
from .autodiff import Network, ParamSet

OUTLIER, BOUNDARY, ROBUST = 0, 1, 2

DEFAULT_PROBE_STEPS = 5


@dataclass(frozen=True)
class BudgetPolicy:
    outlier_steps: int = 0
    boundary_steps: int = 10
    robust_steps: int = 1

    def __post_init__(self):
        if min(self.outlier_steps, self.boundary_steps, self.robust_steps) < 0:
            raise ValueError("attack budgets must be >= 0")
        if self.boundary_steps < self.robust_steps:
            raise ValueError("boundary examples should get at least the robust budget")

    def steps_for(self, category: int) -> int:
        return (self.outlier_steps, self.boundary_steps, self.robust_steps)[category]


@dataclass(frozen=True)
class CategoryCounts:
    n_outlier: int
    n_boundary: int
    n_robust: int

    @property
    def total(self) -> int:
        return self.n_outlier + self.n_boundary + self.n_robust


def default_probe(train_attack: AttackSpec) -> AttackSpec:
    """PGD-5 single-restart probe at the training ball."""
    from dataclasses import replace

    return replace(train_attack, steps=min(DEFAULT_PROBE_STEPS, max(train_attack.steps, 1)), restarts=1)


def categorize_examples(
    network: Network,
    params: ParamSet,
    features: np.ndarray,
    labels: np.ndarray,
    probe: AttackSpec,
    rng: np.random.Generator | int | None = None,
) -> tuple[np.ndarray, CategoryCounts]:
    """Assign each example exactly one of outlier / boundary / robust."""
    labels = np.asarray(labels)
    clean_correct = network.forward(params, features).argmax(axis=1) == labels
    adv = pgd_attack(network, params, features, labels, probe, rng, objective="ce")
    adv_correct = network.forward(params, adv).argmax(axis=1) == labels

    categories = np.full(len(labels), OUTLIER, dtype=np.int8)
    categories[clean_correct & ~adv_correct] = BOUNDARY
    categories[clean_correct & adv_correct] = ROBUST
    counts = CategoryCounts(
        int((categories == OUTLIER).sum()),
        int((categories == BOUNDARY).sum()),
        int((categories == ROBUST).sum()),
    )
    return categories, counts


def allocate_attack_budget(categories: np.ndarray, policy: BudgetPolicy) -> np.ndarray:
    """Training-attack step count per example; epsilon and alpha are untouched."""
    table = np.array([policy.outlier_steps, policy.boundary_steps, policy.robust_steps])
    return table[categories]


def track_dynamics(history: list[tuple[int, CategoryCounts]]) -> list[tuple[int, int, int, int]]:
    """Per-epoch (epoch, n_outlier, n_boundary, n_robust) rows."""
    if not history:
        raise ValueError("need at least one recorded epoch")
    return [(epoch, c.n_outlier, c.n_boundary, c.n_robust) for epoch, c in history]


def write_tracking_csv(path, history: list[tuple[int, CategoryCounts]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "n_outlier", "n_boundary", "n_robust"])
        writer.writerows(track_dynamics(history))


def read_tracking_csv(path) -> list[tuple[int, CategoryCounts]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                (int(row["epoch"]), CategoryCounts(int(row["n_outlier"]), int(row["n_boundary"]), int(row["n_robust"])))
            )
    return out
