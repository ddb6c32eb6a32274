"""Weighted training-subset selection against adversarially perturbed data.

Three selectors share one output type:

* ``random``    -- uniform sample without replacement, unit weights.
* ``gradmatch`` -- orthogonal matching pursuit over per-example last-layer
  gradients of adversarial examples, targeting their sum (the full-data
  adversarial gradient). Weights come from the ridge re-fit.
* ``glister``   -- greedy picks maximizing the drop in adversarial
  validation loss under a one-step final-layer update (first-order gain).

Both gradient-based selectors restrict themselves to classifier-layer
gradients, which for softmax cross-entropy are available in closed form
(softmax minus one-hot, outer product with the features). Solver internals
run in float64; model arithmetic stays float32.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, pgd_attack
from .autodiff import Network, ParamSet
from .losses import log_softmax

_CHUNK = 1024  # examples per attack/forward chunk inside selectors


@dataclass
class SubsetSelection:
    indices: np.ndarray  # sorted, unique positions into the training set
    weights: np.ndarray  # one non-negative weight per index
    objective: float  # final selector objective value
    select_seconds: float
    round_epoch: int = 0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)

    def validate(self, n: int) -> None:
        if len(self.indices) != len(self.weights):
            raise ValueError("indices and weights must align")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("indices must be unique")
        if np.any(np.diff(self.indices) < 0):
            raise ValueError("indices must be sorted")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ValueError("index out of range")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class SelectorConfig:
    kind: str  # "random" | "glister" | "gradmatch"
    fraction: float
    selection_attack: AttackSpec
    glister_eta: float = 0.05
    omp_lambda: float = 0.0
    omp_tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("random", "glister", "gradmatch"):
            raise ValueError(f"unknown selector kind {self.kind!r}")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        if self.glister_eta <= 0:
            raise ValueError("glister_eta must be positive")
        if self.omp_lambda < 0 or self.omp_tol < 0:
            raise ValueError("omp_lambda and omp_tol must be >= 0")


def subset_size(fraction: float, n: int) -> int:
    return min(n, max(1, math.ceil(fraction * n)))


def select_random(n: int, k: int, seed: int | np.random.Generator) -> SubsetSelection:
    """Uniform sample of k distinct indices, all weights 1."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t0 = time.perf_counter()
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return SubsetSelection(idx, np.ones(k), objective=0.0, select_seconds=time.perf_counter() - t0)


def last_layer_gradients(
    network: Network, params: ParamSet, features: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Per-example softmax-CE gradients restricted to the classifier layer.

    Row i is [grad W (fan_in x K, row-major), grad b (K,)] flattened, i.e.
    dimension K*(fan_in+1). The pre-activation gradient is softmax - onehot.
    """
    if len(features) == 0:
        raise ValueError("need at least one example")
    labels = np.asarray(labels)
    outs = []
    for i in range(0, len(features), _CHUNK):
        sl = slice(i, i + _CHUNK)
        feats, logits = network.features_and_logits(params, features[sl])
        p = np.exp(log_softmax(logits))
        g = p.copy()
        g[np.arange(len(g)), labels[sl]] -= 1.0
        dw = feats[:, :, None] * g[:, None, :]  # (b, fan_in, K)
        outs.append(np.concatenate([dw.reshape(len(g), -1), g], axis=1))
    return np.concatenate(outs, axis=0)


@dataclass
class OmpResult:
    indices: list[int]  # in pick order
    weights: np.ndarray  # aligned with indices, clamped at >= 0
    residual_norms: list[float]  # ||target||, then after each pick
    warning: bool = False  # set when no column correlates with the residual

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1]


def omp_solve(columns: np.ndarray, target: np.ndarray, k: int, lam: float = 0.0, tol: float = 0.0) -> OmpResult:
    """Greedy orthogonal matching pursuit with a ridge re-fit.

    Picks the column with maximal |correlation| against the residual (ties
    break toward the lowest index), re-fits weights on the chosen columns by
    solving (A'A + lam*I) w = A'b, and stops at k columns or when the
    residual norm drops to tol. Weights are clamped at zero only after the
    final fit.
    """
    columns = np.asarray(columns, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    d, m = columns.shape
    if k > m:
        raise ValueError(f"cannot pick k={k} columns out of m={m}")
    if target.shape != (d,):
        raise ValueError(f"target shape {target.shape} does not match columns ({d}, {m})")

    resid = target.copy()
    norms = [float(np.linalg.norm(resid))]
    chosen: list[int] = []
    weights = np.zeros(0)
    warning = False
    while len(chosen) < k and norms[-1] > tol:
        corr = np.abs(columns.T @ resid)
        corr[chosen] = -np.inf
        pick = int(np.argmax(corr))
        if not corr[pick] > 0:
            warning = norms[-1] > 0
            break
        chosen.append(pick)
        sub = columns[:, chosen]
        gram = sub.T @ sub + lam * np.eye(len(chosen))
        weights = np.linalg.lstsq(gram, sub.T @ target, rcond=None)[0]
        resid = target - sub @ weights
        norms.append(float(np.linalg.norm(resid)))
    return OmpResult(chosen, np.maximum(weights, 0.0), norms, warning)


def _attack_in_chunks(network, params, features, labels, spec, rng) -> np.ndarray:
    out = []
    for i in range(0, len(features), _CHUNK):
        sl = slice(i, i + _CHUNK)
        out.append(pgd_attack(network, params, features[sl], labels[sl], spec, rng, objective="ce"))
    return np.concatenate(out, axis=0)


def select_adv_gradmatch(
    network: Network,
    params: ParamSet,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: SelectorConfig,
    rng: np.random.Generator | int | None = None,
) -> SubsetSelection:
    """Match the summed adversarial gradient of the full set with a weighted subset.

    If OMP stops early (tolerance reached or nothing correlates), the
    remaining budget is filled with the lowest unchosen indices at weight 1;
    the recorded objective is the residual at the OMP stopping point.
    """
    t0 = time.perf_counter()
    n = len(features)
    k = subset_size(cfg.fraction, n)
    if k == n:
        # Unit weights reproduce the target exactly; skip the solver.
        adv = _attack_in_chunks(network, params, features, labels, cfg.selection_attack, rng)
        grads = last_layer_gradients(network, params, adv, labels).astype(np.float64)
        objective = float(np.linalg.norm(grads.sum(axis=0) - grads.T @ np.ones(n)))
        return SubsetSelection(
            np.arange(n), np.ones(n), objective, time.perf_counter() - t0
        )

    adv = _attack_in_chunks(network, params, features, labels, cfg.selection_attack, rng)
    grads = last_layer_gradients(network, params, adv, labels).astype(np.float64)
    columns = grads.T
    target = grads.sum(axis=0)
    result = omp_solve(columns, target, k, cfg.omp_lambda, cfg.omp_tol)

    idx = list(result.indices)
    weights = list(result.weights)
    if len(idx) < k:
        taken = set(idx)
        for j in range(n):
            if len(idx) == k:
                break
            if j not in taken:
                idx.append(j)
                weights.append(1.0)
    order = np.argsort(idx)
    selection = SubsetSelection(
        np.asarray(idx)[order],
        np.asarray(weights)[order],
        objective=result.final_residual,
        select_seconds=time.perf_counter() - t0,
    )
    selection.validate(n)
    return selection


def _sum_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].sum())


def _final_layer(network: Network, params: ParamSet):
    dense = network.final_dense
    return params[dense.w_name].astype(np.float64), params[dense.b_name].astype(np.float64)


def glister_gain(
    network: Network,
    params: ParamSet,
    candidate_grad: np.ndarray,
    val_adv: np.ndarray,
    val_labels: np.ndarray,
    eta: float,
) -> float:
    """Validation-loss drop from one classifier-layer step along a candidate gradient.

    gain = L_V(theta) - L_V(theta - eta * g), with L_V the summed
    cross-entropy on the (already perturbed) validation batch and the step
    applied to the final dense layer only.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    w, b = _final_layer(network, params)
    feats, _ = network.features_and_logits(params, val_adv)
    feats = feats.astype(np.float64)
    labels = np.asarray(val_labels)
    dw = candidate_grad[: w.size].reshape(w.shape).astype(np.float64)
    db = candidate_grad[w.size :].astype(np.float64)
    before = _sum_ce(feats @ w + b, labels)
    after = _sum_ce(feats @ (w - eta * dw) + (b - eta * db), labels)
    return before - after


def greedy_gain_select(
    cand_grads: np.ndarray,
    val_feats: np.ndarray,
    val_labels: np.ndarray,
    w0: np.ndarray,
    b0: np.ndarray,
    eta: float,
    k: int,
) -> tuple[list[int], float]:
    """Pick k candidates greedily by first-order validation gain.

    After each pick the hypothetical classifier weights move by
    -eta * gradient, and subsequent gains are measured against the updated
    weights. Ties break toward the lowest unchosen index. Returns the picks
    in order plus the final validation loss.
    """
    n, dim = cand_grads.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    fan_in, classes = w0.shape
    if dim != classes * (fan_in + 1):
        raise ValueError(f"gradient dim {dim} does not match classifier ({fan_in}+1)x{classes}")
    labels = np.asarray(val_labels)
    cand = cand_grads.astype(np.float64)
    feats = val_feats.astype(np.float64)
    # Per-candidate logit deltas are fixed: feats @ dW_i + db_i.
    dws = cand[:, : w0.size].reshape(n, fan_in, classes)
    dbs = cand[:, w0.size :]
    deltas = np.einsum("mf,nfk->nmk", feats, dws) + dbs[:, None, :]

    w = w0.astype(np.float64).copy()
    b = b0.astype(np.float64).copy()
    chosen: list[int] = []
    taken = np.zeros(n, dtype=bool)
    for _ in range(k):
        base = feats @ w + b
        cand_logits = base[None, :, :] - eta * deltas
        shifted = cand_logits - cand_logits.max(axis=2, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=2))
        losses = (logz - np.take_along_axis(shifted, labels[None, :, None], axis=2)[:, :, 0]).sum(axis=1)
        losses[taken] = np.inf
        pick = int(np.argmin(losses))
        chosen.append(pick)
        taken[pick] = True
        w -= eta * dws[pick]
        b -= eta * dbs[pick]
    final_loss = _sum_ce(feats @ w + b, labels)
    return chosen, final_loss


def select_adv_glister(
    network: Network,
    params: ParamSet,
    features: np.ndarray,
    labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    cfg: SelectorConfig,
    rng: np.random.Generator | int | None = None,
) -> SubsetSelection:
    """Greedy subset choice maximizing adversarial validation-likelihood gain."""
    if len(val_features) == 0:
        raise ValueError("glister requires a non-empty validation set")
    t0 = time.perf_counter()
    n = len(features)
    k = subset_size(cfg.fraction, n)

    val_adv = _attack_in_chunks(network, params, val_features, val_labels, cfg.selection_attack, rng)
    train_adv = _attack_in_chunks(network, params, features, labels, cfg.selection_attack, rng)
    cand = last_layer_gradients(network, params, train_adv, labels)
    val_feats, _ = network.features_and_logits(params, val_adv)
    w0, b0 = _final_layer(network, params)

    chosen, final_loss = greedy_gain_select(cand, val_feats, val_labels, w0, b0, cfg.glister_eta, k)
    selection = SubsetSelection(
        np.sort(np.asarray(chosen)),
        np.ones(k),
        objective=final_loss,
        select_seconds=time.perf_counter() - t0,
    )
    selection.validate(n)
    return selection


def write_selection_csv(path, selections: list[SubsetSelection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "index", "weight"])
        for sel in selections:
            for idx, weight in zip(sel.indices, sel.weights):
                writer.writerow([sel.round_epoch, int(idx), repr(float(weight))])


def read_selection_csv(path) -> dict[int, list[tuple[int, float]]]:
    rounds: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rounds.setdefault(int(row["round"]), []).append((int(row["index"]), float(row["weight"])))
    return rounds
