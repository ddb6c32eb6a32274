import pytest

from advprune.config import ConfigError, build_settings, parse_config_text, parse_eps
from advprune.experiment import parse_method

GOOD = """
# toy experiment
dataset = data/train.bin
dataset.test = data/test.bin
methods = full, random@0.3, gradmatch@0.3+bullet
model.kind = mlp
loss.kind = trades
loss.beta = 1
selector.kind = gradmatch
selector.fraction = 0.3
selector.interval = 20
attack.train.eps = 8/255
attack.train.alpha = 2/255
attack.train.steps = 10
attack.eval.eps_list = 4/255, 8/255, 16/255
optim.lr = 0.01
optim.momentum = 0.9
optim.weight_decay = 2e-4
bullet.on = true
bullet.steps_outlier = 0
bullet.steps_boundary = 10
bullet.steps_robust = 1
epochs = 100
batch_size = 128
seed = 7
"""


class TestParse:
    def test_good_config(self):
        settings = build_settings(parse_config_text(GOOD))
        assert settings.train_attack.epsilon == pytest.approx(8 / 255)
        assert settings.train_attack.alpha == pytest.approx(2 / 255)
        assert [a.epsilon for a in settings.eval_attacks] == pytest.approx([4 / 255, 8 / 255, 16 / 255])
        assert settings.eval_attacks[0].steps == 50 and settings.eval_attacks[0].restarts == 10
        assert settings.methods == ["full", "random@0.3", "gradmatch@0.3+bullet"]
        assert settings.bullet.boundary_steps == 10
        assert settings.seed == 7

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="selector.franction"):
            parse_config_text("selector.franction = 0.3")

    def test_duplicate_key_named(self):
        with pytest.raises(ConfigError, match="duplicate key 'epochs'"):
            parse_config_text("epochs = 1\nepochs = 2")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("epochs 100")

    def test_missing_required_key(self):
        with pytest.raises(ConfigError, match="dataset"):
            build_settings(parse_config_text("epochs = 1\nbatch_size = 8\nattack.train.eps = 0.1"))

    def test_bad_value_names_key(self):
        text = GOOD.replace("epochs = 100", "epochs = ten")
        with pytest.raises(ConfigError, match="epochs"):
            build_settings(parse_config_text(text))

    def test_bad_selector_named(self):
        text = GOOD.replace("selector.kind = gradmatch", "selector.kind = craig")
        with pytest.raises(ConfigError, match="selector.kind"):
            build_settings(parse_config_text(text))

    def test_bad_bool_named(self):
        text = GOOD.replace("bullet.on = true", "bullet.on = maybe")
        with pytest.raises(ConfigError, match="bullet.on"):
            build_settings(parse_config_text(text))


class TestEps:
    def test_fraction(self):
        assert parse_eps("8/255") == pytest.approx(8 / 255)

    def test_decimal(self):
        assert parse_eps("0.031") == pytest.approx(0.031)

    def test_whitespace(self):
        assert parse_eps(" 16/255 ") == pytest.approx(16 / 255)


class TestMethodStrings:
    def test_full(self):
        assert parse_method("full") == ("full", None, False)

    def test_selector_with_fraction(self):
        assert parse_method("glister@0.5") == ("glister", 0.5, False)

    def test_bullet_suffix(self):
        assert parse_method("gradmatch@0.3+bullet") == ("gradmatch", 0.3, True)

    def test_unknown_selector(self):
        with pytest.raises(ConfigError):
            parse_method("craig@0.3")

    def test_missing_fraction(self):
        with pytest.raises(ConfigError):
            parse_method("gradmatch")

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            parse_method("random@lots")
