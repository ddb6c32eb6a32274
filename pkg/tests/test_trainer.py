import numpy as np
import pytest

import advprune as ap
from advprune.attacks import AttackSpec
from advprune.bullet import BudgetPolicy
from advprune.losses import LossConfig
from advprune.selection import SelectorConfig
from advprune.trainer import (
    EpochMetrics,
    TrainConfig,
    TrainingDivergedError,
    adversarial_train,
    read_metrics_csv,
    selection_epochs,
    selection_schedule,
    training_loss_grads,
    write_metrics_csv,
)

TRAIN_ATTACK = AttackSpec(epsilon=0.08, alpha=0.02, steps=3, random_init=True)
SEL_ATTACK = AttackSpec(epsilon=0.08, alpha=0.02, steps=2, random_init=True)


def _cfg(**kwargs):
    base = dict(
        epochs=4,
        batch_size=32,
        loss=LossConfig("trades", beta=1.0),
        train_attack=TRAIN_ATTACK,
        eval_attacks=(AttackSpec(epsilon=0.08, alpha=0.02, steps=10),),
        selector=None,
        selection_interval=2,
        lr0=0.05,
        momentum=0.9,
        weight_decay=1e-4,
        track=True,
        seed=0,
    )
    base.update(kwargs)
    return TrainConfig(**base)


def _run(data, cfg, spec=None, **kwargs):
    spec = spec or ap.ModelSpec("mlp", (2,), classes=2)
    net = ap.build_network(spec)
    params = ap.init_model(spec, cfg.seed)
    return adversarial_train(net, params, data.features, data.labels, cfg, **kwargs)


class TestSgdUpdate:
    def test_zero_grad_zero_decay_leaves_params(self):
        params = ap.ParamSet([("w", np.array([1.0, 2.0], dtype=np.float32))])
        velocity = ap.ParamSet([("w", np.array([0.4, 0.4], dtype=np.float32))])
        ap.sgd_update(params, {"w": np.zeros(2, dtype=np.float32)}, velocity, lr=0.0, momentum=0.5, weight_decay=0.0)
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])
        np.testing.assert_allclose(velocity["w"], [0.2, 0.2])  # velocity decays by momentum

    def test_plain_gradient_step(self):
        params = ap.ParamSet([("w", np.array([1.0], dtype=np.float32))])
        velocity = params.zeros_like()
        ap.sgd_update(params, {"w": np.array([2.0], dtype=np.float32)}, velocity, lr=0.1, momentum=0.0, weight_decay=0.0)
        assert params["w"][0] == pytest.approx(0.8)

    def test_weight_decay_hand_value(self):
        params = ap.ParamSet([("w", np.array([1.0], dtype=np.float32))])
        velocity = params.zeros_like()
        ap.sgd_update(params, {"w": np.zeros(1, dtype=np.float32)}, velocity, lr=0.1, momentum=0.0, weight_decay=0.1)
        assert params["w"][0] == pytest.approx(0.99)

    def test_shape_mismatch(self):
        params = ap.ParamSet([("w", np.zeros(3, dtype=np.float32))])
        with pytest.raises(ValueError, match="w"):
            ap.sgd_update(params, {"w": np.zeros(2, dtype=np.float32)}, params.zeros_like(), 0.1, 0.0, 0.0)


class TestLrSchedule:
    def test_initial(self):
        cfg = _cfg(epochs=100, lr0=0.01)
        assert ap.lr_schedule(0, cfg) == 0.01

    def test_halfway_drop(self):
        cfg = _cfg(epochs=100, lr0=0.01)
        assert ap.lr_schedule(50, cfg) == pytest.approx(0.001)
        assert ap.lr_schedule(49, cfg) == 0.01

    def test_three_quarter_drop(self):
        cfg = _cfg(epochs=100, lr0=0.01)
        assert ap.lr_schedule(75, cfg) == pytest.approx(0.0001)


class TestSelectionSchedule:
    def test_interval_20_of_200(self):
        fired = selection_epochs(20, 200)
        assert fired == list(range(20, 200, 20))
        assert len(fired) == 9

    def test_interval_40_of_200(self):
        assert selection_epochs(40, 200) == [40, 80, 120, 160]

    def test_interval_beyond_run(self):
        assert selection_epochs(300, 200) == []

    def test_epoch_zero_never_fires(self):
        assert not selection_schedule(0, 5, 100)


class TestWeightedLoss:
    def test_duplicate_example_half_weight_invariance(self):
        spec = ap.ModelSpec("mlp", (2,), classes=2)
        net = ap.build_network(spec)
        params = ap.init_model(spec, 1)
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (6, 2)).astype(np.float32)
        xa = np.clip(x + rng.uniform(-0.05, 0.05, x.shape), 0, 1).astype(np.float32)
        y = rng.integers(0, 2, 6)
        w = rng.uniform(0.5, 2.0, 6)
        base, _ = training_loss_grads(net, params, x, xa, y, w, "trades", 1.0, 1.0)
        dup = lambda arr: np.concatenate([arr, arr[2:3]])
        w2 = np.concatenate([w, [w[2] / 2]])
        w2[2] /= 2
        doubled, _ = training_loss_grads(net, params, dup(x), dup(xa), dup(y), w2, "trades", 1.0, 1.0)
        assert doubled == pytest.approx(base, abs=1e-6)

    def test_unit_weights_match_plain_mean(self):
        spec = ap.ModelSpec("mlp", (2,), classes=2)
        net = ap.build_network(spec)
        params = ap.init_model(spec, 2)
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, (5, 2)).astype(np.float32)
        y = rng.integers(0, 2, 5)
        weighted, _ = training_loss_grads(net, params, x, x, y, np.ones(5), "ce")
        assert weighted == pytest.approx(ap.cross_entropy(net.forward(params, x), y), rel=1e-7)


class TestAdversarialTrain:
    def test_metrics_shape_and_invariants(self, toy_points):
        cfg = _cfg()
        result = _run(toy_points, cfg)
        assert len(result.metrics) == cfg.epochs
        for m in result.metrics:
            assert m.epoch_seconds > 0
            assert 0 <= m.clean_acc <= 1
            assert all(0 <= acc <= 1 for acc in m.robust_accs)
            assert np.isfinite(m.train_loss)
            assert m.counts is not None and m.counts.total == len(toy_points)

    def test_selection_history_matches_schedule(self, toy_points):
        selector = SelectorConfig("random", fraction=0.4, selection_attack=SEL_ATTACK)
        cfg = _cfg(epochs=7, selector=selector, selection_interval=2)
        result = _run(toy_points, cfg)
        assert [s.round_epoch for s in result.selections] == selection_epochs(2, 7)
        for sel in result.selections:
            sel.validate(len(toy_points))

    def test_full_vs_fraction_one_random_bit_identical(self, toy_points):
        full = _run(toy_points, _cfg(selector=None))
        rand = _run(
            toy_points,
            _cfg(selector=SelectorConfig("random", fraction=1.0, selection_attack=SEL_ATTACK)),
        )
        assert full.params == rand.params  # bitwise
        assert [m.clean_acc for m in full.metrics] == [m.clean_acc for m in rand.metrics]
        assert [m.train_loss for m in full.metrics] == [m.train_loss for m in rand.metrics]

    def test_deterministic_given_seed(self, toy_points):
        selector = SelectorConfig("gradmatch", fraction=0.4, selection_attack=SEL_ATTACK)
        cfg = _cfg(selector=selector, selection_interval=2)
        a = _run(toy_points, cfg)
        b = _run(toy_points, cfg)
        assert a.params == b.params
        np.testing.assert_array_equal(a.selections[0].indices, b.selections[0].indices)

    def test_uniform_bullet_policy_matches_plain(self, toy_points):
        plain = _run(toy_points, _cfg(bullet=None, track=True))
        uniform = _run(toy_points, _cfg(bullet=BudgetPolicy(3, 3, 3), track=True))
        assert plain.params == uniform.params

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # inf/nan is the point
    def test_divergence_aborts_with_location(self, toy_points):
        cfg = _cfg(lr0=1e9, epochs=3, loss=LossConfig("ce"))
        with pytest.raises(TrainingDivergedError, match="epoch"):
            _run(toy_points, cfg)

    def test_glister_requires_valset(self, toy_points):
        selector = SelectorConfig("glister", fraction=0.3, selection_attack=SEL_ATTACK)
        with pytest.raises(ValueError, match="validation"):
            _run(toy_points, _cfg(selector=selector))

    def test_batch_smaller_than_dataset_guard(self, toy_points):
        with pytest.raises(ValueError, match="batch_size"):
            _run(toy_points, _cfg(batch_size=100_000))

    def test_checkpoint_hook_interval(self, toy_points):
        calls = []
        cfg = _cfg(epochs=5)
        _run(toy_points, cfg, checkpoint_fn=lambda e, p: calls.append(e), checkpoint_interval=2)
        assert calls == [1, 3]

    def test_epoch_time_scales_with_fraction(self, toy_points):
        # Coarse linear-scaling sanity: a 30% subset epoch should take
        # well under the full-data epoch once selection time is excluded.
        full = _run(toy_points, _cfg(epochs=5, track=False))
        frac = _run(
            toy_points,
            _cfg(epochs=5, track=False, selector=SelectorConfig("random", fraction=0.3, selection_attack=SEL_ATTACK)),
        )
        t_full = np.median([m.epoch_seconds for m in full.metrics[1:]])
        t_frac = np.median([m.epoch_seconds for m in frac.metrics[1:]])
        assert t_frac < t_full


def test_metrics_csv_round_trip(tmp_path, toy_points):
    cfg = _cfg(epochs=3, selector=SelectorConfig("random", fraction=0.5, selection_attack=SEL_ATTACK))
    result = _run(toy_points, cfg)
    path = tmp_path / "metrics.csv"
    eps = tuple(a.epsilon for a in cfg.eval_attacks)
    write_metrics_csv(path, result.metrics, eps)
    rows = read_metrics_csv(path)
    assert len(rows) == 3
    for row, m in zip(rows, result.metrics):
        assert row["epoch"] == m.epoch
        assert row["train_loss"] == m.train_loss
        assert row["clean_acc"] == m.clean_acc
        assert row[f"robust_acc@{eps[0]:g}"] == m.robust_accs[0]
        assert row["epoch_seconds"] == m.epoch_seconds
        assert row["n_outlier"] == m.counts.n_outlier


def test_train_config_validation():
    good = dict(
        epochs=1, batch_size=8, loss=LossConfig("ce"), train_attack=TRAIN_ATTACK
    )
    TrainConfig(**good)
    for bad in (
        dict(epochs=0),
        dict(batch_size=0),
        dict(lr0=0.0),
        dict(momentum=1.0),
        dict(weight_decay=-0.1),
        dict(selection_interval=0),
    ):
        with pytest.raises(ValueError):
            TrainConfig(**{**good, **bad})
