import hypothesis
import numpy as np
import pytest

import advprune as ap

hypothesis.settings.register_profile("fast", max_examples=15, deadline=None)
hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")


TINY_MLP = ap.ModelSpec("mlp", (3,), classes=4, hidden=(8, 6))
TINY_CNN = ap.ModelSpec("tiny_cnn", (1, 8, 8), classes=3, channels=(3, 4))


@pytest.fixture(scope="session")
def toy_points():
    """Separable two-cluster data for quick training fixtures."""
    return ap.generate_toy_dataset("two_gaussians", 400, noise=0.06, seed=11)


@pytest.fixture(scope="session")
def trained_toy_model(toy_points):
    """MLP clean-trained on the two-cluster data; accurate but not robustified."""
    spec = ap.ModelSpec("mlp", (2,), classes=2)
    net = ap.build_network(spec)
    params = ap.init_model(spec, 5)
    velocity = params.zeros_like()
    rng = np.random.default_rng(5)
    from advprune.losses import ce_with_grads

    for _ in range(120):
        pick = rng.choice(len(toy_points), size=64, replace=False)
        x, y = toy_points.features[pick], toy_points.labels[pick]
        rec = ap.evaluate_with_gradients(net, params, x, y, ce_with_grads)
        ap.sgd_update(params, rec.param_grads, velocity, 0.5, 0.9, 0.0)
    return spec, net, params
