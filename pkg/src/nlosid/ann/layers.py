"""Differentiable layers over 64-bit numpy arrays.

Every layer takes batch-first inputs, caches what its backward pass needs,
and accumulates parameter gradients in ``grads`` (zeroed between batches).
Accumulation happens inside single matrix products over the batch axis, so
the reduction order is fixed and runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from nlosid import kernels

PROB_FLOOR = 1e-12


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map y = W x + b for a single vector."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 1 or weights.ndim != 2 or bias.ndim != 1:
        raise ValueError("dense_forward expects a vector, a matrix, and a vector")
    if weights.shape[1] != x.shape[0] or weights.shape[0] != bias.shape[0]:
        raise ValueError(
            f"shape mismatch: weights {weights.shape}, x {x.shape}, bias {bias.shape}")
    return weights @ x + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; safe for logits of any scale."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, target: np.ndarray) -> float:
    """-log of the probability assigned to the one-hot target, floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape or probs.ndim != 1:
        raise ValueError("probs and target must be equal-length vectors")
    hits = np.flatnonzero(target == 1.0)
    if hits.size != 1 or target.sum() != 1.0:
        raise ValueError("target must be one-hot")
    return -float(np.log(max(float(probs[hits[0]]), PROB_FLOOR)))


def batch_cross_entropy(probs: np.ndarray, target_idx: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy for row-stochastic probs and integer targets."""
    picked = probs[np.arange(probs.shape[0]), target_idx]
    return -np.log(np.maximum(picked, PROB_FLOOR))


class Layer:
    """Shared graph-node plumbing; concrete layers fill in the math."""

    name = "layer"

    def __init__(self):
        self.params: list = []
        self.grads: list = []

    def zero_grads(self) -> None:
        for g in self.grads:
            g[...] = 0.0

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def init_params(self, in_shape: tuple, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _fan_in_uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    """Fully-connected layer on ("vec", n) activations."""

    def __init__(self, units: int):
        super().__init__()
        if units < 1:
            raise ValueError(f"units must be positive, got {units}")
        self.units = units
        self.weights = None
        self.bias = None
        self.name = f"dense({units})"

    def out_shape(self, in_shape: tuple) -> tuple:
        if in_shape[0] != "vec":
            raise ValueError("expects a flat vector input")
        return ("vec", self.units)

    def init_params(self, in_shape: tuple, rng: np.random.Generator) -> None:
        fan_in = in_shape[1]
        self.weights = _fan_in_uniform(rng, fan_in, (self.units, fan_in))
        self.bias = np.zeros(self.units)
        self.params = [self.weights, self.bias]
        self.grads = [np.zeros_like(self.weights), np.zeros_like(self.bias)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, gy: np.ndarray) -> np.ndarray:
        self.grads[0] += gy.T @ self._x
        self.grads[1] += gy.sum(axis=0)
        return gy @ self.weights


class Conv1d(Layer):
    """Valid-mode strided cross-correlation on ("seq", channels, length)."""

    def __init__(self, n_kernels: int, kernel_width: int, stride: int):
        super().__init__()
        if n_kernels < 1 or kernel_width < 1:
            raise ValueError("kernel count and width must be positive")
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        self.n_kernels = n_kernels
        self.kernel_width = kernel_width
        self.stride = stride
        self.kernels = None
        self.bias = None
        self.name = f"conv1d({n_kernels}x{kernel_width}/{stride})"

    def out_shape(self, in_shape: tuple) -> tuple:
        if in_shape[0] != "seq":
            raise ValueError("expects a channel sequence input")
        _, channels, length = in_shape
        if self.kernel_width > length:
            raise ValueError(
                f"kernel width {self.kernel_width} exceeds input length {length}")
        out_len = kernels.conv1d_output_length(length, self.kernel_width, self.stride)
        return ("seq", self.n_kernels, out_len)

    def init_params(self, in_shape: tuple, rng: np.random.Generator) -> None:
        channels = in_shape[1]
        fan_in = channels * self.kernel_width
        self.kernels = _fan_in_uniform(
            rng, fan_in, (self.n_kernels, channels, self.kernel_width))
        self.bias = np.zeros(self.n_kernels)
        self.params = [self.kernels, self.bias]
        self.grads = [np.zeros_like(self.kernels), np.zeros_like(self.bias)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = kernels.conv1d_forward(x, self.kernels, self.stride)
        return y + self.bias[None, :, None]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        gy = np.ascontiguousarray(gy)
        self.grads[0] += kernels.conv1d_grad_kernels(
            self._x, gy, self.stride, self.kernel_width)
        self.grads[1] += gy.sum(axis=(0, 2))
        return kernels.conv1d_grad_input(
            gy, self.kernels, self.stride, self._x.shape[2])


class Relu(Layer):
    name = "relu"

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, gy, 0.0)


class Flatten(Layer):
    name = "flatten"

    def out_shape(self, in_shape: tuple) -> tuple:
        if in_shape[0] != "seq":
            raise ValueError("expects a channel sequence input")
        return ("vec", in_shape[1] * in_shape[2])

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return gy.reshape(self._shape)
