"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The backend is chosen once at import time. Set ``NLOSID_KERNELS`` to
``c`` (require the compiled extension), ``python`` (force the numpy
fallback), or ``auto`` (default: compiled if built, else numpy). Both
backends implement identical contracts and are compared bin-for-bin in
the test suite and the shipped benchmark.

Shapes: arrays are 64-bit floats; ``x`` is (batch, in_channels, length),
``kernels`` is (out_channels, in_channels, width), outputs follow.
Convolutions are valid (no padding) strided cross-correlations.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

__all__ = [
    "backend_name",
    "available_backends",
    "conv1d_forward",
    "conv1d_grad_input",
    "conv1d_grad_kernels",
    "deposit_bins",
    "conv1d_output_length",
]


def _load_backend():
    choice = os.environ.get("NLOSID_KERNELS", "auto").strip().lower()
    if choice not in ("auto", "c", "python"):
        raise ValueError(
            f"NLOSID_KERNELS must be one of auto/c/python, got {choice!r}")
    if choice == "python":
        return _pykernels
    try:
        from . import _ckernels
        return _ckernels
    except ImportError:
        if choice == "c":
            raise ImportError(
                "NLOSID_KERNELS=c but the compiled kernel extension is not built")
        return _pykernels


_impl = _load_backend()


def backend_name() -> str:
    """Name of the active backend: 'c' or 'python'."""
    return _impl.BACKEND


def available_backends() -> tuple:
    """Names of the backends importable in this installation."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.insert(0, "c")
    except ImportError:
        pass
    return tuple(names)


def conv1d_output_length(in_len: int, width: int, stride: int) -> int:
    if width > in_len:
        raise ValueError(f"kernel width {width} exceeds input length {in_len}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return (in_len - width) // stride + 1


def _check3(name: str, a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"{name} must be 3-dimensional, got shape {a.shape}")
    return a


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, stride: int) -> np.ndarray:
    """(B, I, L) cross-correlated with (O, I, W) at the given stride -> (B, O, L_out)."""
    x = _check3("x", x)
    kernels = _check3("kernels", kernels)
    if x.shape[1] != kernels.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]}, kernels expect {kernels.shape[1]}")
    conv1d_output_length(x.shape[2], kernels.shape[2], stride)
    return _impl.conv1d_forward(x, kernels, stride)


def conv1d_grad_input(gy: np.ndarray, kernels: np.ndarray, stride: int,
                      in_len: int) -> np.ndarray:
    """Gradient of the forward pass with respect to its input, shape (B, I, in_len)."""
    gy = _check3("gy", gy)
    kernels = _check3("kernels", kernels)
    if gy.shape[1] != kernels.shape[0]:
        raise ValueError(
            f"channel mismatch: gy has {gy.shape[1]}, kernels produce {kernels.shape[0]}")
    expect = conv1d_output_length(in_len, kernels.shape[2], stride)
    if gy.shape[2] != expect:
        raise ValueError(f"gy length {gy.shape[2]} != expected {expect}")
    return _impl.conv1d_grad_input(gy, kernels, stride, in_len)


def conv1d_grad_kernels(x: np.ndarray, gy: np.ndarray, stride: int,
                        width: int) -> np.ndarray:
    """Gradient of the forward pass with respect to the kernels, shape (O, I, W)."""
    x = _check3("x", x)
    gy = _check3("gy", gy)
    expect = conv1d_output_length(x.shape[2], width, stride)
    if gy.shape[2] != expect:
        raise ValueError(f"gy length {gy.shape[2]} != expected {expect}")
    if x.shape[0] != gy.shape[0]:
        raise ValueError(f"batch mismatch: {x.shape[0]} vs {gy.shape[0]}")
    return _impl.conv1d_grad_kernels(x, gy, stride, width)


def deposit_bins(indices: np.ndarray, weights: np.ndarray, n_bins: int) -> np.ndarray:
    """Sum ``weights`` into ``n_bins`` accumulators addressed by ``indices``."""
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if indices.shape != weights.shape or indices.ndim != 1:
        raise ValueError("indices and weights must be equal-length 1-d arrays")
    if n_bins <= 0:
        raise ValueError(f"n_bins must be positive, got {n_bins}")
    if indices.size and (indices.min() < 0 or indices.max() >= n_bins):
        raise ValueError("bin index out of range")
    return _impl.deposit_bins(indices, weights, n_bins)
