"""Pure-numpy reference implementation of the hot kernels.

Used when the compiled extension is unavailable or explicitly disabled.
Convolutions are valid (no padding) strided cross-correlations over
(batch, channel, length) arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "python"


def _windows(x: np.ndarray, width: int, stride: int) -> np.ndarray:
    # (B, I, L) -> (B, I, L_out, W) view, no copy
    b, i, l = x.shape
    l_out = (l - width) // stride + 1
    sb, si, sl = x.strides
    return as_strided(x, (b, i, l_out, width), (sb, si, sl * stride, sl))


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(np.ascontiguousarray(x), kernels.shape[2], stride)
    # (B, L_out, O) from summing over channel and tap axes
    y = np.tensordot(win, kernels, axes=([1, 3], [1, 2]))
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def conv1d_grad_input(gy: np.ndarray, kernels: np.ndarray, stride: int,
                      in_len: int) -> np.ndarray:
    b, _, l_out = gy.shape
    _, i, width = kernels.shape
    gx = np.zeros((b, i, in_len), dtype=np.float64)
    # (B, L_out, I, W): each output position's contribution to its window
    contrib = np.tensordot(gy, kernels, axes=([1], [0]))
    for w in range(width):
        stop = w + stride * l_out
        gx[:, :, w:stop:stride] += contrib[:, :, :, w].transpose(0, 2, 1)
    return gx


def conv1d_grad_kernels(x: np.ndarray, gy: np.ndarray, stride: int,
                        width: int) -> np.ndarray:
    win = _windows(np.ascontiguousarray(x), width, stride)
    # (O, I, W) from summing over batch and output positions
    return np.ascontiguousarray(np.tensordot(gy, win, axes=([0, 2], [0, 2])))


def deposit_bins(indices: np.ndarray, weights: np.ndarray, n_bins: int) -> np.ndarray:
    return np.bincount(indices, weights=weights, minlength=n_bins).astype(np.float64)
