"""Flat key=value experiment configuration.

One ``key = value`` pair per line; ``#`` starts a comment. Epsilons accept
both decimals and fractions like ``8/255``. Unknown keys are rejected so
typos fail loudly. See README for the full key table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec
from .bullet import BudgetPolicy
from .losses import LossConfig
from .selection import SelectorConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_KNOWN_KEYS = {
    "dataset",
    "dataset.test",
    "methods",
    "model.kind",
    "loss.kind",
    "loss.beta",
    "loss.lambda_mart",
    "selector.kind",
    "selector.fraction",
    "selector.interval",
    "selector.val_fraction",
    "selector.glister_eta",
    "selector.omp_lambda",
    "selector.omp_tol",
    "attack.train.eps",
    "attack.train.alpha",
    "attack.train.steps",
    "attack.train.restarts",
    "attack.train.random_init",
    "attack.select.steps",
    "attack.select.alpha",
    "attack.eval.eps_list",
    "attack.eval.steps",
    "attack.eval.restarts",
    "attack.eval.alpha",
    "optim.lr",
    "optim.momentum",
    "optim.weight_decay",
    "bullet.on",
    "bullet.steps_outlier",
    "bullet.steps_boundary",
    "bullet.steps_robust",
    "track.on",
    "metrics.steps",
    "metrics.max_examples",
    "checkpoint.interval",
    "epochs",
    "batch_size",
    "seed",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_config(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read(), source=str(path))


def parse_eps(text: str) -> float:
    """Accepts decimals ('0.1') and fractions ('8/255')."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {text!r}")


def _get(values, key, default=None, cast=str):
    if key not in values:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return cast(values[key])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from exc


@dataclass
class ExperimentSettings:
    """Everything run_experiment needs, decoded from the flat config."""

    dataset_path: str
    test_path: str | None
    methods: list[str]
    model_kind: str
    loss: LossConfig
    selector_kind: str
    fraction: float
    selection_interval: int
    val_fraction: float
    glister_eta: float
    omp_lambda: float
    omp_tol: float
    train_attack: AttackSpec
    select_attack: AttackSpec
    eval_attacks: tuple[AttackSpec, ...]
    lr: float
    momentum: float
    weight_decay: float
    bullet: BudgetPolicy | None
    track: bool
    metrics_steps: int
    metrics_max_examples: int
    checkpoint_interval: int
    epochs: int
    batch_size: int
    seed: int

    def selector_config(self, kind: str | None = None, fraction: float | None = None) -> SelectorConfig | None:
        kind = self.selector_kind if kind is None else kind
        if kind in ("full", "none"):
            return None
        return SelectorConfig(
            kind=kind,
            fraction=self.fraction if fraction is None else fraction,
            selection_attack=self.select_attack,
            glister_eta=self.glister_eta,
            omp_lambda=self.omp_lambda,
            omp_tol=self.omp_tol,
        )

    def train_config(
        self,
        selector: SelectorConfig | None,
        bullet: BudgetPolicy | None = None,
    ) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            loss=self.loss,
            train_attack=self.train_attack,
            eval_attacks=self.eval_attacks,
            selector=selector,
            selection_interval=self.selection_interval,
            lr0=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            bullet=bullet,
            track=self.track,
            seed=self.seed,
            metrics_steps=self.metrics_steps,
            metrics_max_examples=self.metrics_max_examples,
        )


def build_settings(values: dict[str, str]) -> ExperimentSettings:
    eps = _get(values, "attack.train.eps", cast=parse_eps)
    alpha = _get(values, "attack.train.alpha", default=eps / 4 if eps > 0 else 1.0, cast=parse_eps)
    train_attack = AttackSpec(
        epsilon=eps,
        alpha=alpha,
        steps=_get(values, "attack.train.steps", default=10, cast=int),
        restarts=_get(values, "attack.train.restarts", default=1, cast=int),
        random_init=_get(values, "attack.train.random_init", default=True, cast=lambda t: _parse_bool("attack.train.random_init", t)),
    )
    select_attack = AttackSpec(
        epsilon=eps,
        alpha=_get(values, "attack.select.alpha", default=alpha, cast=parse_eps),
        steps=_get(values, "attack.select.steps", default=5, cast=int),
        restarts=1,
        random_init=train_attack.random_init,
    )
    eval_alpha = _get(values, "attack.eval.alpha", default=2 / 255, cast=parse_eps)
    eval_steps = _get(values, "attack.eval.steps", default=50, cast=int)
    eval_restarts = _get(values, "attack.eval.restarts", default=10, cast=int)
    eps_list_text = values.get("attack.eval.eps_list", "")
    eval_eps = [parse_eps(tok) for tok in eps_list_text.replace(",", " ").split()] if eps_list_text else [eps]
    eval_attacks = tuple(
        AttackSpec(epsilon=e, alpha=eval_alpha, steps=eval_steps, restarts=eval_restarts, random_init=True)
        for e in eval_eps
    )

    bullet = None
    if _get(values, "bullet.on", default=False, cast=lambda t: _parse_bool("bullet.on", t)):
        bullet = BudgetPolicy(
            outlier_steps=_get(values, "bullet.steps_outlier", default=0, cast=int),
            boundary_steps=_get(values, "bullet.steps_boundary", default=train_attack.steps, cast=int),
            robust_steps=_get(values, "bullet.steps_robust", default=1, cast=int),
        )

    try:
        loss = LossConfig(
            kind=_get(values, "loss.kind", default="trades"),
            beta=_get(values, "loss.beta", default=1.0, cast=float),
            lambda_mart=_get(values, "loss.lambda_mart", default=1.0, cast=float),
        )
    except ValueError as exc:
        raise ConfigError(f"key 'loss.kind': {exc}") from exc

    methods_text = values.get("methods", "")
    methods = [tok.strip() for tok in methods_text.split(",") if tok.strip()]

    selector_kind = _get(values, "selector.kind", default="full")
    if selector_kind not in ("full", "none", "random", "glister", "gradmatch"):
        raise ConfigError(f"key 'selector.kind': unknown selector {selector_kind!r}")

    return ExperimentSettings(
        dataset_path=_get(values, "dataset"),
        test_path=values.get("dataset.test"),
        methods=methods,
        model_kind=_get(values, "model.kind", default="mlp"),
        loss=loss,
        selector_kind=selector_kind,
        fraction=_get(values, "selector.fraction", default=0.3, cast=float),
        selection_interval=_get(values, "selector.interval", default=20, cast=int),
        val_fraction=_get(values, "selector.val_fraction", default=0.1, cast=float),
        glister_eta=_get(values, "selector.glister_eta", default=0.05, cast=float),
        omp_lambda=_get(values, "selector.omp_lambda", default=0.0, cast=float),
        omp_tol=_get(values, "selector.omp_tol", default=1e-8, cast=float),
        train_attack=train_attack,
        select_attack=select_attack,
        eval_attacks=eval_attacks,
        lr=_get(values, "optim.lr", default=0.01, cast=float),
        momentum=_get(values, "optim.momentum", default=0.9, cast=float),
        weight_decay=_get(values, "optim.weight_decay", default=2e-4, cast=float),
        bullet=bullet,
        track=_get(values, "track.on", default=True, cast=lambda t: _parse_bool("track.on", t)),
        metrics_steps=_get(values, "metrics.steps", default=10, cast=int),
        metrics_max_examples=_get(values, "metrics.max_examples", default=512, cast=int),
        checkpoint_interval=_get(values, "checkpoint.interval", default=0, cast=int),
        epochs=_get(values, "epochs", cast=int),
        batch_size=_get(values, "batch_size", cast=int),
        seed=_get(values, "seed", default=0, cast=int),
    )


def load_settings(path) -> ExperimentSettings:
    return build_settings(parse_config(path))
