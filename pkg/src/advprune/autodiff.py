"""Dense tensors with explicit forward/backward kernels.

The layer set (affine, ReLU, stride-1 zero-padded convolution, 2x2 max
pooling, flatten) is exactly what the toy classifiers need. Reverse mode
runs over per-layer caches instead of a taped graph: a forward pass returns
the caches, and ``Network.backward`` walks them in reverse. Kernels follow
the dtype of their inputs, so the finite-difference oracle can re-evaluate
the same computation in float64 while the models themselves stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatchError(ValueError):
    """An operand does not have the shape a kernel expects."""

    def __init__(self, name: str, detail: str):
        super().__init__(f"{name}: {detail}")
        self.tensor_name = name


class NonFiniteLossError(ArithmeticError):
    """A loss evaluation produced NaN or infinity."""


class ParamSet:
    """Ordered mapping of parameter names to arrays.

    Insertion order is load-bearing: initialization draws, flattening,
    gradient reductions and SGD updates all walk parameters in this order.
    """

    __slots__ = ("_tensors",)

    def __init__(self, tensors: dict[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = tensors.items() if isinstance(tensors, dict) else tensors
        self._tensors: dict[str, np.ndarray] = {}
        for name, value in items:
            if name in self._tensors:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._tensors[name] = np.asarray(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.names == other.names and all(
            np.array_equal(self._tensors[n], other._tensors[n]) for n in self._tensors
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def total_size(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy(self) -> "ParamSet":
        return ParamSet((n, t.copy()) for n, t in self._tensors.items())

    def astype(self, dtype) -> "ParamSet":
        return ParamSet((n, t.astype(dtype)) for n, t in self._tensors.items())

    def zeros_like(self) -> "ParamSet":
        return ParamSet((n, np.zeros_like(t)) for n, t in self._tensors.items())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self._tensors.values()])

    def with_flat(self, flat: np.ndarray) -> "ParamSet":
        if flat.size != self.total_size:
            raise ShapeMismatchError("flat", f"expected {self.total_size} scalars, got {flat.size}")
        out, offset = [], 0
        for name, t in self._tensors.items():
            out.append((name, flat[offset : offset + t.size].reshape(t.shape).astype(t.dtype)))
            offset += t.size
        return ParamSet(out)


@dataclass
class GradientRecord:
    """Loss plus gradients w.r.t. every parameter and the input batch."""

    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray
    loss_value: float


# ---------------------------------------------------------------------------
# Layers. Each exposes forward(params, x) -> (y, cache) and
# backward(params, dy, cache, with_param_grads) -> (dx, {name: grad}).
# ---------------------------------------------------------------------------


class Dense:
    """Affine map y = x @ W + b with W of shape (fan_in, fan_out)."""

    def __init__(self, w_name: str, b_name: str):
        self.w_name = w_name
        self.b_name = b_name

    @property
    def param_names(self):
        return (self.w_name, self.b_name)

    def forward(self, params: ParamSet, x: np.ndarray):
        w = params[self.w_name]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeMismatchError(
                self.w_name, f"input of shape {x.shape} incompatible with weight {w.shape}"
            )
        return x @ w + params[self.b_name], x

    def backward(self, params: ParamSet, dy: np.ndarray, cache, with_param_grads=True):
        x = cache
        dx = dy @ params[self.w_name].T
        if not with_param_grads:
            return dx, {}
        return dx, {self.w_name: x.T @ dy, self.b_name: dy.sum(axis=0)}


class Relu:
    param_names = ()

    def forward(self, params: ParamSet, x: np.ndarray):
        return np.maximum(x, 0), x

    def backward(self, params: ParamSet, dy: np.ndarray, cache, with_param_grads=True):
        return dy * (cache > 0), {}


class Flatten:
    param_names = ()

    def forward(self, params: ParamSet, x: np.ndarray):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params: ParamSet, dy: np.ndarray, cache, with_param_grads=True):
        return dy.reshape(cache), {}


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patches of a zero-padded NCHW batch as rows, (B*H*W, C*kh*kw)."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,C,H,W,kh,kw)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * kh * kw)


class Conv2d:
    """Stride-1 convolution with zero padding that preserves H and W.

    Weight shape (out_ch, in_ch, kh, kw) with odd kh, kw; bias per channel.
    """

    def __init__(self, w_name: str, b_name: str):
        self.w_name = w_name
        self.b_name = b_name

    @property
    def param_names(self):
        return (self.w_name, self.b_name)

    def forward(self, params: ParamSet, x: np.ndarray):
        w = params[self.w_name]
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeMismatchError(
                self.w_name, f"input of shape {x.shape} incompatible with kernel {w.shape}"
            )
        b, _, h, wid = x.shape
        oc, ic, kh, kw = w.shape
        cols = _im2col(x, kh, kw)
        y = cols @ w.reshape(oc, ic * kh * kw).T + params[self.b_name]
        return y.reshape(b, h, wid, oc).transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, params: ParamSet, dy: np.ndarray, cache, with_param_grads=True):
        cols, x_shape = cache
        w = params[self.w_name]
        oc, ic, kh, kw = w.shape
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, oc)
        # dx is itself a same-padded stride-1 convolution of dy with the
        # spatially flipped kernel, channels swapped.
        w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        b, _, h, wid = dy.shape
        dcols = _im2col(dy, kh, kw)
        dx = (dcols @ w_flip.reshape(ic, oc * kh * kw).T).reshape(b, h, wid, ic)
        dx = dx.transpose(0, 3, 1, 2).reshape(x_shape)
        if not with_param_grads:
            return dx, {}
        dw = (dy_mat.T @ cols).reshape(oc, ic, kh, kw)
        return dx, {self.w_name: dw, self.b_name: dy_mat.sum(axis=0)}


class MaxPool2:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    Ties route the gradient to the first maximal element of the window.
    """

    param_names = ()

    def forward(self, params: ParamSet, x: np.ndarray):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        xe = x[:, :, : h2 * 2, : w2 * 2]
        windows = xe.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
        idx = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, params: ParamSet, dy: np.ndarray, cache, with_param_grads=True):
        idx, x_shape = cache
        b, c, h, w = x_shape
        h2, w2 = h // 2, w // 2
        scatter = np.zeros((b, c, h2, w2, 4), dtype=dy.dtype)
        np.put_along_axis(scatter, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, : h2 * 2, : w2 * 2] = (
            scatter.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2 * 2, w2 * 2)
        )
        return dx, {}


class Network:
    """A straight-line stack of layers ending in the classifier Dense."""

    def __init__(self, layers: list):
        self.layers = layers
        self._final = layers[-1] if layers else None
        if layers and not isinstance(self._final, Dense):
            raise ValueError("networks must end in a Dense classifier layer")

    @property
    def final_dense(self) -> Dense:
        if self._final is None:
            raise ValueError("empty network has no classifier layer")
        return self._final

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(n for layer in self.layers for n in layer.param_names)

    def forward(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x, _ = layer.forward(params, x)
        return x

    def forward_with_cache(self, params: ParamSet, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x)
            caches.append(cache)
        return x, caches

    def backward(self, params: ParamSet, dlogits: np.ndarray, caches, with_param_grads=True):
        grads: dict[str, np.ndarray] = {}
        dy = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(params, dy, cache, with_param_grads)
            grads.update(layer_grads)
        ordered = {n: grads[n] for n in self.param_names if n in grads}
        return dy, ordered

    def features_and_logits(self, params: ParamSet, x: np.ndarray):
        """Activations entering the classifier layer, plus the logits."""
        for layer in self.layers[:-1]:
            x, _ = layer.forward(params, x)
        logits, _ = self.final_dense.forward(params, x)
        return x, logits


LossHandle = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def evaluate_with_gradients(
    network: Network,
    params: ParamSet,
    inputs: np.ndarray,
    labels: np.ndarray,
    loss: LossHandle,
) -> GradientRecord:
    """One forward/backward pass; pure with respect to ``params``.

    ``loss`` maps (logits, labels) to (scalar, d(loss)/d(logits)).
    """
    logits, caches = network.forward_with_cache(params, inputs)
    value, dlogits = loss(logits, labels)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss evaluated to {value!r}")
    input_grad, param_grads = network.backward(params, dlogits, caches)
    return GradientRecord(param_grads, input_grad, float(value))


def central_difference(fn: Callable[[ParamSet], float], params: ParamSet, h: float) -> dict[str, np.ndarray]:
    """Central differences of a scalar function of a ParamSet.

    ``params`` should be float64; the returned gradients share its shapes.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    grads = {}
    for name, tensor in params.items():
        grad = np.zeros_like(tensor)
        flat, gflat = tensor.ravel(), grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(params)
            flat[i] = orig - h
            down = fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def kink_distance(network: Network, params: ParamSet, batch: np.ndarray) -> float:
    """Distance of a forward pass from the nearest non-differentiable point.

    Central differences only estimate the gradient where the loss is smooth
    across the +-h window: a ReLU pre-activation inside that window, or a
    pooling window whose positive maximum is nearly tied, corrupts the
    estimate. Gradient checks should skip (or resample) instances whose
    kink distance is not comfortably larger than h. Ties between exact
    zeros (dead ReLU units feeding a pool) are harmless, both sides of such
    a tie carry zero gradient, so they are ignored.
    """
    dist = np.inf
    x = batch
    for layer in network.layers:
        if isinstance(layer, Relu):
            dist = min(dist, float(np.abs(x).min()))
        elif isinstance(layer, MaxPool2):
            b, c, h, w = x.shape
            h2, w2 = h // 2, w // 2
            windows = (
                x[:, :, : h2 * 2, : w2 * 2]
                .reshape(b, c, h2, 2, w2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(b, c, h2, w2, 4)
            )
            tops = np.sort(windows, axis=-1)[..., -2:]
            runner, top = tops[..., 0], tops[..., 1]
            live = runner > 0
            if live.any():
                dist = min(dist, float((top[live] - runner[live]).min()))
        x = layer.forward(params, x)[0]
    return dist


def finite_difference_gradient(
    network: Network,
    params: ParamSet,
    inputs: np.ndarray,
    labels: np.ndarray,
    loss: LossHandle,
    h: float = 1e-3,
) -> GradientRecord:
    """Central-difference oracle for :func:`evaluate_with_gradients`.

    Evaluates in float64 so the truncation error, not rounding, dominates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    p64 = params.astype(np.float64)
    x64 = inputs.astype(np.float64)

    def value(pp: ParamSet, xx: np.ndarray) -> float:
        v, _ = loss(network.forward(pp, xx), labels)
        return float(v)

    param_grads = central_difference(lambda pp: value(pp, x64), p64, h)
    input_grad = np.zeros_like(x64)
    flat, gflat = x64.ravel(), input_grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = value(p64, x64)
        flat[i] = orig - h
        down = value(p64, x64)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return GradientRecord(param_grads, input_grad, value(p64, x64))
