"""Two-branch, two-head classifier assembled from the layer primitives.

A histogram enters twice: once as a single-channel sequence through the
convolutional branch, once as a flat vector through the dense branch.  The
branch outputs are concatenated, pushed through a dense trunk, and split
into independent softmax heads for person identity and target position.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from nlosid.ann.layers import (Conv1d, Dense, Flatten, Layer, Relu,
                               batch_cross_entropy, softmax)
from nlosid.rng import generator

MAGIC = b"NLNW"
VERSION = 1

LAYER_KINDS = ("dense", "conv1d", "relu", "flatten", "concat", "softmax-head")
_KIND_CODES = {kind: i + 1 for i, kind in enumerate(LAYER_KINDS)}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_HEADER = struct.Struct("<4sHHIII")
_SPEC = struct.Struct("<BIII")


class NetworkFormatError(ValueError):
    """Raised when a serialized network file cannot be decoded."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    kernels: int = 0
    kernel_width: int = 0
    stride: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("dense", "softmax-head") and self.units < 1:
            raise ValueError(f"{self.kind} needs a positive unit count")
        if self.kind == "conv1d":
            if self.kernels < 1 or self.kernel_width < 1:
                raise ValueError("conv1d needs positive kernel count and width")
            if self.stride < 1:
                raise ValueError("conv1d stride must be >= 1")


def default_architecture() -> dict:
    """Branch and trunk layout used for 250-bin histograms."""
    return {
        "conv_branch": [
            LayerSpec("conv1d", kernels=16, kernel_width=9, stride=2),
            LayerSpec("relu"),
            LayerSpec("conv1d", kernels=32, kernel_width=5, stride=2),
            LayerSpec("relu"),
            LayerSpec("flatten"),
        ],
        "dense_branch": [LayerSpec("dense", units=64), LayerSpec("relu")],
        "trunk": [LayerSpec("dense", units=64), LayerSpec("relu")],
    }


def reduced_architecture() -> dict:
    """Small layout for gradient checks against finite differences."""
    return {
        "conv_branch": [
            LayerSpec("conv1d", kernels=4, kernel_width=3, stride=2),
            LayerSpec("relu"),
            LayerSpec("flatten"),
        ],
        "dense_branch": [LayerSpec("dense", units=8), LayerSpec("relu")],
        "trunk": [LayerSpec("dense", units=8), LayerSpec("relu")],
    }


def _layer_from_spec(spec: LayerSpec) -> Layer:
    if spec.kind == "dense":
        return Dense(spec.units)
    if spec.kind == "conv1d":
        return Conv1d(spec.kernels, spec.kernel_width, spec.stride)
    if spec.kind == "relu":
        return Relu()
    if spec.kind == "flatten":
        return Flatten()
    raise ValueError(f"{spec.kind} is not a standalone layer")


def _walk(layers, in_shape, list_name, prev_name, rng=None):
    """Shape-check a layer list, initializing parameters when rng is given."""
    shape = in_shape
    for i, layer in enumerate(layers):
        name = f"{list_name}[{i}]:{layer.name}"
        try:
            out = layer.out_shape(shape)
        except ValueError as err:
            raise ValueError(f"{name} rejects the output of {prev_name}: {err}") from None
        if rng is not None:
            layer.init_params(shape, rng)
        shape, prev_name = out, name
    return shape, prev_name


class TwoHeadNetwork:
    """Shared trunk with softmax heads over identity and position."""

    def __init__(self, n_bins, n_class, n_loc, conv_specs, dense_specs,
                 trunk_specs, seed):
        if n_bins < 1 or n_class < 1 or n_loc < 1:
            raise ValueError("n_bins, n_class, and n_loc must be positive")
        self.n_bins = int(n_bins)
        self.n_class = int(n_class)
        self.n_loc = int(n_loc)
        self.seed = int(seed)
        self.conv_specs = tuple(conv_specs)
        self.dense_specs = tuple(dense_specs)
        self.trunk_specs = tuple(trunk_specs)

        self.conv_layers = [_layer_from_spec(s) for s in self.conv_specs]
        self.dense_layers = [_layer_from_spec(s) for s in self.dense_specs]
        self.trunk_layers = [_layer_from_spec(s) for s in self.trunk_specs]
        self.head_class = Dense(self.n_class)
        self.head_class.name = f"head_class:dense({self.n_class})"
        self.head_loc = Dense(self.n_loc)
        self.head_loc.name = f"head_loc:dense({self.n_loc})"

        rng = generator(self.seed, "init")
        conv_out, last = _walk(self.conv_layers, ("seq", 1, self.n_bins),
                               "conv_branch", "the histogram input", rng)
        if conv_out[0] != "vec":
            raise ValueError(
                f"conv_branch must end flat for concatenation, {last} is not")
        dense_out, _ = _walk(self.dense_layers, ("vec", self.n_bins),
                             "dense_branch", "the histogram input", rng)
        self._conv_width = conv_out[1]
        merged = ("vec", conv_out[1] + dense_out[1])
        trunk_out, last = _walk(self.trunk_layers, merged, "trunk",
                                "the branch concatenation", rng)
        for head in (self.head_class, self.head_loc):
            try:
                head.out_shape(trunk_out)
            except ValueError as err:
                raise ValueError(
                    f"{head.name} rejects the output of {last}: {err}") from None
            head.init_params(trunk_out, rng)

        class_probs, loc_probs = self.forward(np.zeros(self.n_bins))
        if class_probs.shape != (self.n_class,) or loc_probs.shape != (self.n_loc,):
            raise ValueError("dry run produced mis-sized head outputs")

    def _all_layers(self):
        yield from self.conv_layers
        yield from self.dense_layers
        yield from self.trunk_layers
        yield self.head_class
        yield self.head_loc

    def parameters(self) -> list:
        return [p for layer in self._all_layers() for p in layer.params]

    def gradients(self) -> list:
        return [g for layer in self._all_layers() for g in layer.grads]

    def zero_grads(self) -> None:
        for layer in self._all_layers():
            layer.zero_grads()

    def _forward_batch(self, x: np.ndarray):
        xc = x[:, None, :]
        for layer in self.conv_layers:
            xc = layer.forward(xc)
        xd = x
        for layer in self.dense_layers:
            xd = layer.forward(xd)
        h = np.concatenate([xc, xd], axis=1)
        for layer in self.trunk_layers:
            h = layer.forward(h)
        class_probs = softmax(self.head_class.forward(h))
        loc_probs = softmax(self.head_loc.forward(h))
        return class_probs, loc_probs

    def forward(self, x: np.ndarray):
        """Head probabilities for one histogram or a batch of them."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        if batch.ndim != 2 or batch.shape[1] != self.n_bins:
            raise ValueError(
                f"input length {x.shape[-1]} != network n_bins {self.n_bins}")
        class_probs, loc_probs = self._forward_batch(batch)
        if single:
            return class_probs[0], loc_probs[0]
        return class_probs, loc_probs

    def predict_probs(self, x: np.ndarray, chunk_size: int = 1024):
        """Batched forward over a large sample matrix, bounded memory."""
        x = np.asarray(x, dtype=np.float64)
        outs_c, outs_l = [], []
        for start in range(0, x.shape[0], chunk_size):
            c, l = self._forward_batch(x[start:start + chunk_size])
            outs_c.append(c)
            outs_l.append(l)
        return np.concatenate(outs_c, axis=0), np.concatenate(outs_l, axis=0)

    def predict(self, x: np.ndarray, chunk_size: int = 1024):
        """Zero-based argmax labels per head; ties go to the lowest index."""
        class_probs, loc_probs = self.predict_probs(x, chunk_size)
        return class_probs.argmax(axis=1), loc_probs.argmax(axis=1)

    def forward_backward(self, x, class_idx, loc_idx, head_weights=(1.0, 1.0),
                         loss_scale=1.0):
        """Mean joint loss over the batch; accumulates parameter gradients."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        class_idx = np.asarray(class_idx, dtype=np.int64)
        loc_idx = np.asarray(loc_idx, dtype=np.int64)
        n = x.shape[0]
        class_probs, loc_probs = self._forward_batch(x)

        w_class, w_loc = head_weights
        ce_class = batch_cross_entropy(class_probs, class_idx)
        ce_loc = batch_cross_entropy(loc_probs, loc_idx)
        loss = loss_scale * float(np.mean(w_class * ce_class + w_loc * ce_loc))

        gh = self._head_logit_grad(class_probs, class_idx, w_class, loss_scale, n)
        gt = self.head_class.backward(gh)
        gh = self._head_logit_grad(loc_probs, loc_idx, w_loc, loss_scale, n)
        gt = gt + self.head_loc.backward(gh)
        for layer in reversed(self.trunk_layers):
            gt = layer.backward(gt)
        gc = np.ascontiguousarray(gt[:, :self._conv_width])
        gd = gt[:, self._conv_width:]
        for layer in reversed(self.conv_layers):
            gc = layer.backward(gc)
        for layer in reversed(self.dense_layers):
            gd = layer.backward(gd)
        return loss

    @staticmethod
    def _head_logit_grad(probs, target_idx, weight, loss_scale, n):
        # The 1e-12 floor makes the loss flat there, so the gradient gates off.
        picked = probs[np.arange(n), target_idx]
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), target_idx] = 1.0
        scale = (weight * loss_scale / n) * (picked > 1e-12)
        return scale[:, None] * (probs - onehot)


def build_network(arch: dict, n_bins: int, n_class: int, n_loc: int,
                  seed: int) -> TwoHeadNetwork:
    """Construct, initialize, and dry-run a network from branch spec lists."""
    return TwoHeadNetwork(n_bins, n_class, n_loc, arch["conv_branch"],
                          arch["dense_branch"], arch["trunk"], seed)


def _pack_specs(specs) -> bytes:
    parts = [struct.pack("<H", len(specs))]
    for s in specs:
        parts.append(_SPEC.pack(_KIND_CODES[s.kind],
                                s.units or s.kernels, s.kernel_width, s.stride))
    return b"".join(parts)


def save_network(net: TwoHeadNetwork, path) -> None:
    """Serialize specs and parameters; same network always yields same bytes."""
    parts = [_HEADER.pack(MAGIC, VERSION, 0, net.n_bins, net.n_class, net.n_loc)]
    for specs in (net.conv_specs, net.dense_specs, net.trunk_specs):
        parts.append(_pack_specs(specs))
    params = net.parameters()
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        parts.append(struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise NetworkFormatError(
                f"file ends at byte {len(self.raw)}, needed {self.pos + n}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def _unpack_specs(reader: _Reader):
    (count,) = struct.unpack("<H", reader.take(2))
    specs = []
    for _ in range(count):
        code, a, b, c = reader.unpack(_SPEC)
        kind = _CODE_KINDS.get(code)
        if kind is None:
            raise NetworkFormatError(f"unknown layer kind code {code}")
        if kind == "conv1d":
            specs.append(LayerSpec(kind, kernels=a, kernel_width=b, stride=c))
        elif kind in ("dense", "softmax-head"):
            specs.append(LayerSpec(kind, units=a))
        else:
            specs.append(LayerSpec(kind))
    return specs


def load_network(path) -> TwoHeadNetwork:
    """Rebuild a serialized network; forward passes reproduce bit-exactly."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic, version, _, n_bins, n_class, n_loc = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise NetworkFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise NetworkFormatError(f"unsupported version {version}")
    arch = {
        "conv_branch": _unpack_specs(reader),
        "dense_branch": _unpack_specs(reader),
        "trunk": _unpack_specs(reader),
    }
    net = build_network(arch, n_bins, n_class, n_loc, seed=0)
    (n_tensors,) = struct.unpack("<I", reader.take(4))
    params = net.parameters()
    if n_tensors != len(params):
        raise NetworkFormatError(
            f"file holds {n_tensors} tensors, architecture needs {len(params)}")
    for p in params:
        (ndim,) = struct.unpack("<B", reader.take(1))
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        if shape != p.shape:
            raise NetworkFormatError(
                f"tensor shape {shape} does not match architecture {p.shape}")
        values = np.frombuffer(reader.take(8 * int(np.prod(shape))), dtype="<f8")
        p[...] = values.reshape(shape)
    if reader.pos != len(reader.raw):
        raise NetworkFormatError(
            f"{len(reader.raw) - reader.pos} trailing bytes after parameters")
    return net
