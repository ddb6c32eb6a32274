"""Dataset container, binary file format, and toy dataset generators.

File layout (little endian): 8-byte magic, u32 n, u32 class count, u32 ndim,
ndim x u32 feature dims, then n*prod(dims) float32 features in [0, 1] and
n int32 labels. Generators produce balanced classes with features inside the
unit box; the 2-d kinds (two_gaussians, spiral, checkerboard) feed the MLP
and ``bars_image`` renders 8x8 single-channel images for the CNN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"ADPDATA1"
_HEADER_HEAD = struct.Struct("<8sIII")


class DatasetFormatError(ValueError):
    """Base class for dataset file problems."""


class MalformedHeaderError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (n, *feature_shape) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])


def write_dataset(path, dataset: Dataset) -> None:
    n = len(dataset)
    dims = dataset.feature_shape
    with open(path, "wb") as fh:
        fh.write(_HEADER_HEAD.pack(DATASET_MAGIC, n, dataset.classes, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER_HEAD.size:
        raise MalformedHeaderError(f"{path}: file shorter than the fixed header")
    magic, n, classes, ndim = _HEADER_HEAD.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if n == 0 or classes < 2 or ndim == 0:
        raise MalformedHeaderError(f"{path}: implausible header (n={n}, classes={classes}, ndim={ndim})")
    offset = _HEADER_HEAD.size
    if len(blob) < offset + 4 * ndim:
        raise MalformedHeaderError(f"{path}: header truncated before feature dims")
    dims = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    feat_bytes = 4 * n * int(np.prod(dims))
    label_bytes = 4 * n
    if len(blob) != offset + feat_bytes + label_bytes:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(blob) - offset} bytes, header implies {feat_bytes + label_bytes}"
        )
    features = np.frombuffer(blob[offset : offset + feat_bytes], dtype="<f4").reshape((n, *dims)).astype(np.float32)
    labels = np.frombuffer(blob[offset + feat_bytes :], dtype="<i4").astype(np.int64)
    if labels.min() < 0 or labels.max() >= classes:
        raise LabelRangeError(f"{path}: label outside [0, {classes})")
    return Dataset(features, labels, classes)


def split_train_val(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffle-then-split; val gets round(val_fraction * n) examples."""
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must be in [0, 1)")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(val_fraction * n))
    val_idx, train_idx = order[:n_val], order[n_val:]
    make = lambda idx: Dataset(dataset.features[idx], dataset.labels[idx], dataset.classes)
    return make(train_idx), make(val_idx)


def _balanced_counts(n: int, classes: int) -> list[int]:
    base, extra = divmod(n, classes)
    return [base + (1 if c < extra else 0) for c in range(classes)]


def _two_gaussians(n, noise, rng):
    counts = _balanced_counts(n, 2)
    centers = np.array([[0.3, 0.3], [0.7, 0.7]])
    xs, ys = [], []
    for label, count in enumerate(counts):
        xs.append(centers[label] + noise * rng.standard_normal((count, 2)))
        ys.append(np.full(count, label))
    return np.concatenate(xs), np.concatenate(ys), 2


def _spiral(n, noise, rng):
    counts = _balanced_counts(n, 2)
    xs, ys = [], []
    for label, count in enumerate(counts):
        t = np.linspace(0.25, 1.0, count) * 3 * np.pi
        r = t / (3 * np.pi) * 0.45
        angle = t + label * np.pi
        pts = 0.5 + np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
        xs.append(pts + noise * rng.standard_normal((count, 2)))
        ys.append(np.full(count, label))
    return np.concatenate(xs), np.concatenate(ys), 2


def _checkerboard(n, noise, rng, cells=4):
    counts = _balanced_counts(n, 2)
    xs, ys = [], []
    for label, count in enumerate(counts):
        have = 0
        pts = np.empty((count, 2))
        while have < count:
            cand = rng.uniform(0, 1, size=(count * 2, 2))
            parity = (np.floor(cand[:, 0] * cells) + np.floor(cand[:, 1] * cells)) % 2
            keep = cand[parity == label][: count - have]
            pts[have : have + len(keep)] = keep
            have += len(keep)
        xs.append(pts + noise * rng.standard_normal((count, 2)))
        ys.append(np.full(count, label))
    return np.concatenate(xs), np.concatenate(ys), 2


def _bars_image(n, noise, rng, side=8, classes=4):
    """Class k is a bright 2-pixel bar: horizontal for even k, vertical for odd."""
    counts = _balanced_counts(n, classes)
    templates = np.full((classes, 1, side, side), 0.15, dtype=np.float64)
    for k in range(classes):
        pos = 1 + 2 * (k // 2)
        if k % 2 == 0:
            templates[k, 0, pos : pos + 2, :] = 0.85
        else:
            templates[k, 0, :, pos : pos + 2] = 0.85
    xs, ys = [], []
    for label, count in enumerate(counts):
        imgs = templates[label] + noise * rng.standard_normal((count, 1, side, side))
        xs.append(imgs)
        ys.append(np.full(count, label))
    return np.concatenate(xs), np.concatenate(ys), classes


_GENERATORS = {
    "two_gaussians": _two_gaussians,
    "spiral": _spiral,
    "checkerboard": _checkerboard,
    "bars_image": _bars_image,
}


def generate_toy_dataset(kind: str, n: int, noise: float, seed: int, path=None) -> Dataset:
    """Balanced synthetic dataset with features clipped into [0, 1]."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown dataset kind {kind!r}; have {sorted(_GENERATORS)}")
    if n < 10:
        raise ValueError("need n >= 10")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    features, labels, classes = _GENERATORS[kind](n, noise, rng)
    dataset = Dataset(
        np.clip(features, 0.0, 1.0).astype(np.float32),
        labels.astype(np.int64),
        classes,
    )
    if path is not None:
        write_dataset(path, dataset)
    return dataset
