"""Training objectives on logits: cross-entropy, KL, TRADES, MART.

Each objective comes in two flavors: a plain scalar (batch mean) matching
the textbook definition, and a ``*_with_grads`` variant that also returns
d(loss)/d(logits) and accepts optional per-example weights. Weights are
normalized by their sum, so the weighted loss is a weighted mean; with unit
weights it reduces to the plain batch mean.

Attack objectives (for PGD/FGSM) live here too. They return per-example
losses plus the gradient of their *sum*, so each example's input gradient is
independent of its batchmates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MART_PROB_FLOOR = 1e-8  # clamp on (1 - max wrong prob) before the log


@dataclass(frozen=True)
class LossConfig:
    kind: str = "trades"  # "ce" | "trades" | "mart"
    beta: float = 1.0
    lambda_mart: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ce", "trades", "mart"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.lambda_mart < 0:
            raise ValueError("lambda_mart must be >= 0")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_labels(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    return labels


def _norm_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("per-example weights must have positive sum")
    return weights / total


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k, dtype=np.float64)[labels]


def _ce_rows(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -log_softmax(logits)[np.arange(logits.shape[0]), labels]


def _kl_rows(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(p_logits)
    return (np.exp(logp) * (logp - log_softmax(q_logits))).sum(axis=1)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-softmax of the true class."""
    labels = _check_labels(logits, labels)
    return float(_ce_rows(logits, labels).mean())


def ce_with_grads(logits, labels, weights=None):
    labels = _check_labels(logits, labels)
    wn = _norm_weights(weights, logits.shape[0])
    rows = _ce_rows(logits, labels)
    dlogits = wn[:, None] * (softmax(logits) - _onehot(labels, logits.shape[1]))
    return float(rows @ wn), dlogits.astype(logits.dtype)


def kl_divergence(p_logits: np.ndarray, q_logits: np.ndarray) -> float:
    """Mean KL(softmax(p) || softmax(q)); zero iff the rows agree."""
    if p_logits.shape != q_logits.shape:
        raise ValueError(f"logit shapes differ: {p_logits.shape} vs {q_logits.shape}")
    return float(_kl_rows(p_logits, q_logits).mean())


def kl_with_grads(p_logits, q_logits, weights=None):
    if p_logits.shape != q_logits.shape:
        raise ValueError(f"logit shapes differ: {p_logits.shape} vs {q_logits.shape}")
    wn = _norm_weights(weights, p_logits.shape[0])
    logp, logq = log_softmax(p_logits), log_softmax(q_logits)
    p, q = np.exp(logp), np.exp(logq)
    s = logp - logq
    rows = (p * s).sum(axis=1)
    dp = wn[:, None] * (p * (s - rows[:, None]))
    dq = wn[:, None] * (q - p)
    return float(rows @ wn), dp.astype(p_logits.dtype), dq.astype(q_logits.dtype)


def trades_loss(clean_logits, adv_logits, labels, cfg: LossConfig) -> float:
    """Clean cross-entropy plus beta-weighted clean-vs-adversarial KL."""
    return cross_entropy(clean_logits, labels) + cfg.beta * kl_divergence(clean_logits, adv_logits)


def trades_with_grads(clean_logits, adv_logits, labels, beta, weights=None):
    labels = _check_labels(clean_logits, labels)
    if clean_logits.shape != adv_logits.shape:
        raise ValueError(f"logit shapes differ: {clean_logits.shape} vs {adv_logits.shape}")
    n, k = clean_logits.shape
    wn = _norm_weights(weights, n)
    logc, loga = log_softmax(clean_logits), log_softmax(adv_logits)
    pc, pa = np.exp(logc), np.exp(loga)
    s = logc - loga
    kl_rows = (pc * s).sum(axis=1)
    rows = -logc[np.arange(n), labels] + beta * kl_rows
    dclean = wn[:, None] * ((pc - _onehot(labels, k)) + beta * pc * (s - kl_rows[:, None]))
    dadv = wn[:, None] * (beta * (pa - pc))
    return float(rows @ wn), dclean.astype(clean_logits.dtype), dadv.astype(adv_logits.dtype)


def mart_loss(clean_logits, adv_logits, labels, cfg: LossConfig) -> float:
    value, _, _ = mart_with_grads(clean_logits, adv_logits, labels, cfg.lambda_mart)
    return value


def mart_with_grads(clean_logits, adv_logits, labels, lam, weights=None):
    """Boosted adversarial cross-entropy plus margin-weighted KL regularizer.

    Per row: -log p_adv[y] - log(1 - max_{k!=y} p_adv[k])
             + lam * KL(clean || adv) * (1 - p_clean[y]).
    The (1 - max wrong prob) factor is clamped at MART_PROB_FLOOR before the
    log; clamped rows contribute no gradient through that term.
    """
    labels = _check_labels(clean_logits, labels)
    if clean_logits.shape != adv_logits.shape:
        raise ValueError(f"logit shapes differ: {clean_logits.shape} vs {adv_logits.shape}")
    n, k = clean_logits.shape
    rows_idx = np.arange(n)
    wn = _norm_weights(weights, n)
    onehot = _onehot(labels, k)
    logc, loga = log_softmax(clean_logits), log_softmax(adv_logits)
    pc, pa = np.exp(logc), np.exp(loga)

    wrong = np.where(onehot > 0, -np.inf, pa)
    m = wrong.argmax(axis=1)
    pm = pa[rows_idx, m]
    one_minus = 1.0 - pm
    clamped = one_minus < MART_PROB_FLOOR
    one_minus = np.maximum(one_minus, MART_PROB_FLOOR)

    s = logc - loga
    kl_rows = (pc * s).sum(axis=1)
    pc_y = pc[rows_idx, labels]
    rows = -loga[rows_idx, labels] - np.log(one_minus) + lam * kl_rows * (1.0 - pc_y)

    # d/d(adv logits): CE term, boosted term (zero where clamped), KL term.
    dadv = pa - onehot
    sel = np.zeros((n, k))
    sel[rows_idx, m] = 1.0
    boost = (pm / one_minus)[:, None] * (sel - pa)
    boost[clamped] = 0.0
    dadv += boost + lam * (1.0 - pc_y)[:, None] * (pa - pc)

    # d/d(clean logits): only the regularizer depends on the clean pass.
    dpc_y = pc_y[:, None] * (onehot - pc)  # gradient of p_clean[y]
    dclean = lam * (-dpc_y * kl_rows[:, None] + (1.0 - pc_y)[:, None] * pc * (s - kl_rows[:, None]))

    dadv = (wn[:, None] * dadv).astype(adv_logits.dtype)
    dclean = (wn[:, None] * dclean).astype(clean_logits.dtype)
    return float(rows @ wn), dclean, dadv


# ---------------------------------------------------------------------------
# Attack objectives. Each factory returns fn(logits) -> (per-example losses,
# gradient of their sum w.r.t. the logits).
# ---------------------------------------------------------------------------


def attack_objective_ce(labels: np.ndarray):
    labels = np.asarray(labels)

    def objective(logits):
        lbl = _check_labels(logits, labels)
        rows = _ce_rows(logits, lbl)
        return rows, (softmax(logits) - _onehot(lbl, logits.shape[1])).astype(logits.dtype)

    return objective


def attack_objective_kl(clean_logits: np.ndarray):
    """KL(clean || current) with the clean distribution frozen (TRADES inner step)."""
    logc = log_softmax(clean_logits)
    pc = np.exp(logc)

    def objective(logits):
        loga = log_softmax(logits)
        rows = (pc * (logc - loga)).sum(axis=1)
        return rows, (np.exp(loga) - pc).astype(logits.dtype)

    return objective


def attack_objective_margin(labels: np.ndarray):
    """Logit margin max_{k!=y} z_k - z_y; positive means misclassified."""
    labels = np.asarray(labels)

    def objective(logits):
        lbl = _check_labels(logits, labels)
        n, k = logits.shape
        rows_idx = np.arange(n)
        masked = logits.copy()
        masked[rows_idx, lbl] = -np.inf
        m = masked.argmax(axis=1)
        rows = logits[rows_idx, m] - logits[rows_idx, lbl]
        d = np.zeros_like(logits)
        d[rows_idx, m] += 1.0
        d[rows_idx, lbl] -= 1.0
        return rows, d

    return objective
