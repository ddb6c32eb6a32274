"""Fixed toy architectures: an MLP for 2-d point clouds, a small CNN for images.

Checkpoints are a simple binary format: magic string, a JSON header carrying
the spec and parameter shapes, then raw little-endian float32 tensors in
ParamSet order.
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Conv2d, Dense, Flatten, MaxPool2, Network, ParamSet, Relu

CHECKPOINT_MAGIC = b"ADPCKPT1"


class InvalidSpecError(ValueError):
    """A ModelSpec violates its structural constraints."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is malformed or inconsistent with its header."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; hashable so networks can be cached per spec."""

    kind: str  # "mlp" | "tiny_cnn"
    input_shape: tuple[int, ...]
    classes: int = 2
    hidden: tuple[int, ...] = (64, 64)  # mlp only
    channels: tuple[int, int] = (16, 32)  # tiny_cnn only

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.kind not in ("mlp", "tiny_cnn"):
            raise InvalidSpecError(f"unknown model kind {self.kind!r}")
        if self.classes < 2:
            raise InvalidSpecError("need at least two classes")
        if self.kind == "mlp":
            if len(self.input_shape) != 1 or self.input_shape[0] < 1:
                raise InvalidSpecError("mlp expects a flat input shape like (2,)")
            if not self.hidden:
                raise InvalidSpecError("mlp needs at least one hidden layer")
        else:
            if len(self.input_shape) != 3:
                raise InvalidSpecError("tiny_cnn expects an input shape (channels, H, W)")
            _, h, w = self.input_shape
            if h != w or h < 8:
                raise InvalidSpecError("tiny_cnn input must be square with side >= 8")
            if len(self.channels) != 2:
                raise InvalidSpecError("tiny_cnn takes exactly two channel counts")


def _layer_plan(spec: ModelSpec) -> list[tuple]:
    """(layer factory, param name, weight shape) triples in forward order."""
    if spec.kind == "mlp":
        plan, fan_in = [], spec.input_shape[0]
        for i, width in enumerate(spec.hidden):
            plan.append(("dense_relu", f"fc{i + 1}", (fan_in, width)))
            fan_in = width
        plan.append(("dense", "out", (fan_in, spec.classes)))
        return plan
    c_in, h, w = spec.input_shape
    c1, c2 = spec.channels
    plan = [
        ("conv_relu_pool", "conv1", (c1, c_in, 3, 3)),
        ("conv_relu_pool", "conv2", (c2, c1, 3, 3)),
    ]
    flat = c2 * (h // 2 // 2) * (w // 2 // 2)
    plan.append(("flatten_dense", "out", (flat, spec.classes)))
    return plan


@functools.lru_cache(maxsize=32)
def build_network(spec: ModelSpec) -> Network:
    layers = []
    for op, name, _ in _layer_plan(spec):
        if op == "dense_relu":
            layers += [Dense(f"{name}.w", f"{name}.b"), Relu()]
        elif op == "dense":
            layers += [Dense(f"{name}.w", f"{name}.b")]
        elif op == "conv_relu_pool":
            layers += [Conv2d(f"{name}.w", f"{name}.b"), Relu(), MaxPool2()]
        else:  # flatten_dense
            layers += [Flatten(), Dense(f"{name}.w", f"{name}.b")]
    return Network(layers)


def init_model(spec: ModelSpec, seed: int) -> ParamSet:
    """He-style fan-in scaled weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    tensors = []
    for op, name, shape in _layer_plan(spec):
        if op == "conv_relu_pool":
            fan_in = shape[1] * shape[2] * shape[3]
            bias_len = shape[0]
        else:
            fan_in = shape[0]
            bias_len = shape[1]
        std = np.sqrt(2.0 / fan_in)
        tensors.append((f"{name}.w", (rng.standard_normal(shape) * std).astype(np.float32)))
        tensors.append((f"{name}.b", np.zeros(bias_len, dtype=np.float32)))
    return ParamSet(tensors)


def forward_logits(params: ParamSet, spec: ModelSpec, inputs: np.ndarray) -> np.ndarray:
    return build_network(spec).forward(params, inputs)


def predict(params: ParamSet, spec: ModelSpec, inputs: np.ndarray) -> np.ndarray:
    """Argmax over logits; ties break toward the lowest class index."""
    return np.argmax(forward_logits(params, spec, inputs), axis=1)


def save_checkpoint(path, spec: ModelSpec, params: ParamSet) -> None:
    header = json.dumps(
        {
            "kind": spec.kind,
            "input_shape": list(spec.input_shape),
            "classes": spec.classes,
            "hidden": list(spec.hidden),
            "channels": list(spec.channels),
            "params": [[name, list(t.shape)] for name, t in params.items()],
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, tensor in params.items():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelSpec, ParamSet]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad checkpoint magic")
    offset = len(CHECKPOINT_MAGIC)
    if len(blob) < offset + 4:
        raise CheckpointFormatError("truncated checkpoint header")
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    try:
        header = json.loads(blob[offset : offset + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from exc
    offset += header_len
    spec = ModelSpec(
        kind=header["kind"],
        input_shape=tuple(header["input_shape"]),
        classes=header["classes"],
        hidden=tuple(header["hidden"]),
        channels=tuple(header["channels"]),
    )
    tensors = []
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointFormatError(f"checkpoint payload truncated at tensor {name!r}")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
        tensors.append((name, arr))
        offset = end
    if offset != len(blob):
        raise CheckpointFormatError("checkpoint has trailing bytes")
    return spec, ParamSet(tensors)
