"""Mini-batch training loop with early stopping on a held-back slice.

Deterministic end to end: the validation split, every epoch's shuffle, and
the optimizer state all derive from the config seed, and batches reduce in
a fixed order, so a repeated run reproduces the loss table bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nlosid.ann.layers import batch_cross_entropy
from nlosid.ann.network import TwoHeadNetwork
from nlosid.dataset import Dataset, shuffled_indices
from nlosid.rng import generator

ADAM_EPS = 1e-8

_HEAD_WEIGHTS = {"both": (1.0, 1.0), "class": (1.0, 0.0), "loc": (0.0, 1.0)}


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; distinct from bad usage."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 10
    heads: str = "both"
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.heads not in _HEAD_WEIGHTS:
            raise ValueError(f"heads must be one of {sorted(_HEAD_WEIGHTS)}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc_class: float
    val_acc_loc: float


def loss_table_csv(stats) -> str:
    """Render per-epoch statistics as the canonical CSV table."""
    lines = ["epoch,train_loss,val_loss,val_acc_class,val_acc_loc"]
    for s in stats:
        lines.append(f"{s.epoch},{s.train_loss!r},{s.val_loss!r},"
                     f"{s.val_acc_class!r},{s.val_acc_loc!r}")
    return "\n".join(lines) + "\n"


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params):
        self.cfg = cfg
        self.slot_a = [np.zeros_like(p) for p in params]
        self.slot_b = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params, grads) -> None:
        cfg = self.cfg
        self.step_count += 1
        if cfg.optimizer == "adam":
            t = self.step_count
            for p, g, m, v in zip(params, grads, self.slot_a, self.slot_b):
                m += (1.0 - cfg.beta1) * (g - m)
                v += (1.0 - cfg.beta2) * (g * g - v)
                mhat = m / (1.0 - cfg.beta1 ** t)
                vhat = v / (1.0 - cfg.beta2 ** t)
                p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + ADAM_EPS)
        else:
            for p, g, vel in zip(params, grads, self.slot_a):
                vel *= cfg.momentum
                vel -= cfg.learning_rate * g
                p += vel


def _evaluate(net, features, class_idx, loc_idx, head_weights):
    class_probs, loc_probs = net.predict_probs(features)
    w_class, w_loc = head_weights
    ce = (w_class * batch_cross_entropy(class_probs, class_idx)
          + w_loc * batch_cross_entropy(loc_probs, loc_idx))
    loss = float(np.mean(ce))
    acc_class = float(np.mean(class_probs.argmax(axis=1) == class_idx))
    acc_loc = float(np.mean(loc_probs.argmax(axis=1) == loc_idx))
    return loss, acc_class, acc_loc


def train(net: TwoHeadNetwork, train_set: Dataset, cfg: TrainConfig):
    """Fit in place; returns the network and the per-epoch statistics."""
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")
    if n < 2:
        raise ValueError("training needs at least two samples to hold one back")
    head_weights = _HEAD_WEIGHTS[cfg.heads]

    features = np.ascontiguousarray(train_set.features, dtype=np.float64)
    class_idx = train_set.person_ids.astype(np.int64) - 1
    loc_idx = train_set.position_indices.astype(np.int64) - 1

    perm = generator(cfg.seed, "holdout-split").permutation(n)
    n_val = max(1, int(round(cfg.holdout_fraction * n)))
    val_rows, fit_rows = perm[:n_val], perm[n_val:]
    val_x, val_c, val_l = features[val_rows], class_idx[val_rows], loc_idx[val_rows]
    fit_x, fit_c, fit_l = features[fit_rows], class_idx[fit_rows], loc_idx[fit_rows]
    n_fit = len(fit_rows)

    params = net.parameters()
    opt = _Optimizer(cfg, params)
    best_val = np.inf
    best_params = [p.copy() for p in params]
    stats = []
    waited = 0

    for epoch in range(1, cfg.epochs + 1):
        order = shuffled_indices(n_fit, cfg.seed, epoch)
        loss_sum = 0.0
        for start in range(0, n_fit, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            net.zero_grads()
            loss = net.forward_backward(fit_x[rows], fit_c[rows], fit_l[rows],
                                        head_weights)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"training loss became non-finite in epoch {epoch}")
            loss_sum += loss * len(rows)
            opt.step(params, net.gradients())
        train_loss = loss_sum / n_fit

        val_loss, acc_class, acc_loc = _evaluate(net, val_x, val_c, val_l,
                                                 head_weights)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(
                f"validation loss became non-finite in epoch {epoch}")
        stats.append(EpochStats(epoch, train_loss, val_loss, acc_class, acc_loc))

        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]
            waited = 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break

    for p, b in zip(params, best_params):
        p[...] = b
    return net, stats
