import struct

import numpy as np
import pytest

import advprune as ap
from advprune.dataio import (
    DATASET_MAGIC,
    LabelRangeError,
    MalformedHeaderError,
    TruncatedPayloadError,
    write_dataset,
)


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        ds = ap.generate_toy_dataset("spiral", 50, noise=0.02, seed=3)
        path = tmp_path / "data.bin"
        write_dataset(path, ds)
        again = ap.load_dataset(path)
        np.testing.assert_array_equal(again.features, ds.features)
        np.testing.assert_array_equal(again.labels, ds.labels)
        assert again.classes == ds.classes

    def test_generate_with_path_writes_file(self, tmp_path):
        path = tmp_path / "gen.bin"
        ds = ap.generate_toy_dataset("two_gaussians", 20, noise=0.05, seed=0, path=path)
        again = ap.load_dataset(path)
        np.testing.assert_array_equal(again.features, ds.features)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 40)
        with pytest.raises(MalformedHeaderError, match="magic"):
            ap.load_dataset(path)

    def test_short_file(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(b"ADP")
        with pytest.raises(MalformedHeaderError):
            ap.load_dataset(path)

    def test_truncated_payload(self, tmp_path):
        ds = ap.generate_toy_dataset("two_gaussians", 20, noise=0.05, seed=1)
        path = tmp_path / "trunc.bin"
        write_dataset(path, ds)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TruncatedPayloadError):
            ap.load_dataset(path)

    def test_label_out_of_range(self, tmp_path):
        ds = ap.generate_toy_dataset("two_gaussians", 10, noise=0.05, seed=2)
        ds.labels[0] = 7  # outside [0, 2)
        path = tmp_path / "label.bin"
        write_dataset(path, ds)
        with pytest.raises(LabelRangeError):
            ap.load_dataset(path)

    def test_zero_examples_rejected(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(struct.pack("<8sIII", DATASET_MAGIC, 0, 2, 1) + struct.pack("<I", 2))
        with pytest.raises(MalformedHeaderError):
            ap.load_dataset(path)


class TestSplit:
    def test_zero_fraction(self):
        ds = ap.generate_toy_dataset("two_gaussians", 30, noise=0.05, seed=0)
        train, val = ap.split_train_val(ds, 0.0, seed=0)
        assert len(val) == 0 and len(train) == 30

    def test_ninety_ten(self):
        ds = ap.generate_toy_dataset("two_gaussians", 1000, noise=0.05, seed=0)
        train, val = ap.split_train_val(ds, 0.1, seed=0)
        assert len(val) == 100 and len(train) == 900
        # disjoint and exhaustive: every original row appears exactly once
        combined = np.concatenate([train.features, val.features])
        assert combined.shape == ds.features.shape
        order = np.lexsort(combined.T)
        base = np.lexsort(ds.features.T)
        np.testing.assert_array_equal(combined[order], ds.features[base])

    def test_same_seed_same_split(self):
        ds = ap.generate_toy_dataset("two_gaussians", 100, noise=0.05, seed=0)
        a_train, a_val = ap.split_train_val(ds, 0.2, seed=4)
        b_train, b_val = ap.split_train_val(ds, 0.2, seed=4)
        np.testing.assert_array_equal(a_train.features, b_train.features)
        np.testing.assert_array_equal(a_val.labels, b_val.labels)

    def test_fraction_bounds(self):
        ds = ap.generate_toy_dataset("two_gaussians", 20, noise=0.05, seed=0)
        with pytest.raises(ValueError):
            ap.split_train_val(ds, 1.0, seed=0)


def _linear_probe_accuracy(ds):
    """Least-squares one-vs-rest probe; enough to certify separability."""
    x = np.concatenate([ds.features.reshape(len(ds), -1), np.ones((len(ds), 1))], axis=1)
    onehot = np.eye(ds.classes)[ds.labels]
    w, *_ = np.linalg.lstsq(x, onehot, rcond=None)
    return float(((x @ w).argmax(axis=1) == ds.labels).mean())


class TestGenerators:
    @pytest.mark.parametrize("kind,classes", [
        ("two_gaussians", 2), ("spiral", 2), ("checkerboard", 2), ("bars_image", 4),
    ])
    def test_balance_and_range(self, kind, classes):
        ds = ap.generate_toy_dataset(kind, 200, noise=0.03, seed=5)
        counts = np.bincount(ds.labels, minlength=classes)
        np.testing.assert_array_equal(counts, [200 // classes] * classes)
        assert ds.features.min() >= 0 and ds.features.max() <= 1
        assert ds.features.dtype == np.float32

    def test_two_gaussians_exact_balance(self):
        ds = ap.generate_toy_dataset("two_gaussians", 1000, noise=0.05, seed=1)
        assert int((ds.labels == 0).sum()) == 500

    def test_noise_free_two_gaussians_linearly_separable(self):
        ds = ap.generate_toy_dataset("two_gaussians", 100, noise=0.0, seed=2)
        assert _linear_probe_accuracy(ds) == 1.0

    def test_bars_image_shape(self):
        ds = ap.generate_toy_dataset("bars_image", 40, noise=0.05, seed=3)
        assert ds.feature_shape == (1, 8, 8)
        assert ds.classes == 4

    def test_deterministic(self):
        a = ap.generate_toy_dataset("checkerboard", 60, noise=0.01, seed=9)
        b = ap.generate_toy_dataset("checkerboard", 60, noise=0.01, seed=9)
        np.testing.assert_array_equal(a.features, b.features)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown dataset kind"):
            ap.generate_toy_dataset("moons", 100, noise=0.1, seed=0)

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            ap.generate_toy_dataset("spiral", 5, noise=0.1, seed=0)
