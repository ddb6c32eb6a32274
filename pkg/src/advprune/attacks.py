"""L-infinity adversarial example generation and robustness evaluation.

PGD follows the standard sign-gradient iteration: project each step onto the
epsilon ball around the clean input intersected with the pixel box. sign(0)
is 0, so flat coordinates never move. With several restarts, the returned
candidate per example is the one with the highest objective after the final
step; robustness *evaluation* is stricter and counts an example as robust
only if it survives every restart.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Network, ParamSet
from .losses import attack_objective_ce, attack_objective_kl, attack_objective_margin


@dataclass(frozen=True)
class AttackSpec:
    epsilon: float
    alpha: float
    steps: int
    restarts: int = 1
    random_init: bool = True
    pixel_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.steps > 0 and self.alpha <= 0:
            raise ValueError("alpha must be positive when steps > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        lo, hi = self.pixel_bounds
        if lo >= hi:
            raise ValueError("pixel_bounds must satisfy lo < hi")


@dataclass
class RobustnessReport:
    clean_acc: float
    entries: list[tuple[float, float]]  # (epsilon, robust accuracy)
    examples: int
    seconds: float

    def robust_acc(self, epsilon: float) -> float:
        for eps, acc in self.entries:
            if eps == epsilon:
                return acc
        raise KeyError(f"no entry for epsilon {epsilon}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epsilon", "clean_acc", "robust_acc", "examples", "seconds"])
            for eps, acc in self.entries:
                writer.writerow([repr(eps), repr(self.clean_acc), repr(acc), self.examples, repr(self.seconds)])


def read_robustness_csv(path) -> RobustnessReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"empty robustness report {path}")
    entries = [(float(r["epsilon"]), float(r["robust_acc"])) for r in rows]
    return RobustnessReport(
        clean_acc=float(rows[0]["clean_acc"]),
        entries=entries,
        examples=int(rows[0]["examples"]),
        seconds=float(rows[0]["seconds"]),
    )


def project_linf(x_clean: np.ndarray, x_cand: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Clamp into the epsilon ball around x_clean, then into the pixel box."""
    if x_clean.shape != x_cand.shape:
        raise ValueError(f"shape mismatch: clean {x_clean.shape} vs candidate {x_cand.shape}")
    lo, hi = spec.pixel_bounds
    out = np.clip(x_cand, x_clean - spec.epsilon, x_clean + spec.epsilon)
    return np.clip(out, lo, hi)


def _resolve_objective(objective, network, params, inputs, labels):
    if callable(objective):
        return objective
    if objective == "ce":
        return attack_objective_ce(labels)
    if objective == "kl":
        return attack_objective_kl(network.forward(params, inputs))
    if objective == "margin":
        return attack_objective_margin(labels)
    raise ValueError(f"unknown attack objective {objective!r}")


def _input_gradient(network, params, x, objective):
    logits, caches = network.forward_with_cache(params, x)
    rows, dlogits = objective(logits)
    grad, _ = network.backward(params, dlogits, caches, with_param_grads=False)
    return rows, grad


def fgsm_perturb(
    network: Network,
    params: ParamSet,
    inputs: np.ndarray,
    labels: np.ndarray,
    spec: AttackSpec,
    objective="ce",
) -> np.ndarray:
    """Single sign step of size epsilon from the clean input."""
    obj = _resolve_objective(objective, network, params, inputs, labels)
    _, grad = _input_gradient(network, params, inputs, obj)
    return project_linf(inputs, inputs + spec.epsilon * np.sign(grad), spec)


def pgd_attack(
    network: Network,
    params: ParamSet,
    inputs: np.ndarray,
    labels: np.ndarray,
    spec: AttackSpec,
    rng: np.random.Generator | int | None = None,
    objective="ce",
) -> np.ndarray:
    """Multi-step sign-gradient ascent inside the epsilon ball.

    Returns, per example, the restart candidate with the highest objective
    value after the final iteration.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    elif rng is None:
        rng = np.random.default_rng()
    obj = _resolve_objective(objective, network, params, inputs, labels)

    best_x = None
    best_rows = None
    for _ in range(spec.restarts):
        if spec.random_init:
            noise = rng.uniform(-spec.epsilon, spec.epsilon, size=inputs.shape)
            x = project_linf(inputs, inputs + noise.astype(inputs.dtype), spec)
        else:
            x = inputs.copy()
        for _ in range(spec.steps):
            _, grad = _input_gradient(network, params, x, obj)
            x = project_linf(inputs, x + spec.alpha * np.sign(grad), spec)
        if spec.restarts == 1:
            return x
        rows, _ = obj(network.forward(params, x))
        if best_x is None:
            best_x, best_rows = x, rows
        else:
            better = rows > best_rows
            best_x = np.where(better[(...,) + (None,) * (x.ndim - 1)], x, best_x)
            best_rows = np.maximum(rows, best_rows)
    return best_x


def evaluate_robust_accuracy(
    network: Network,
    params: ParamSet,
    features: np.ndarray,
    labels: np.ndarray,
    attacks: list[AttackSpec],
    seed: int,
    objective="ce",
    batch_size: int = 512,
) -> RobustnessReport:
    """Clean accuracy plus worst-case-over-restarts robust accuracy per spec.

    An example counts as robust under a spec only if it is classified
    correctly after *every* restart's final iterate.
    """
    n = len(features)
    if n == 0:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    labels = np.asarray(labels)
    preds = np.concatenate(
        [network.forward(params, features[i : i + batch_size]).argmax(axis=1) for i in range(0, n, batch_size)]
    )
    clean_correct = preds == labels
    clean_acc = float(clean_correct.mean())

    seeds = np.random.SeedSequence(seed).spawn(len(attacks))
    entries = []
    for spec, ss in zip(attacks, seeds):
        rng = np.random.default_rng(ss)
        surviving = clean_correct.copy()
        single = replace(spec, restarts=1)
        for _ in range(spec.restarts):
            for i in range(0, n, batch_size):
                sl = slice(i, i + batch_size)
                adv = pgd_attack(network, params, features[sl], labels[sl], single, rng, objective)
                adv_pred = network.forward(params, adv).argmax(axis=1)
                surviving[sl] &= adv_pred == labels[sl]
        entries.append((spec.epsilon, float(surviving.mean())))
    return RobustnessReport(clean_acc, entries, n, time.perf_counter() - t0)
