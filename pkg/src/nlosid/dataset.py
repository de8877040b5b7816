"""From raw frames to training samples: background subtraction, hot-pixel
detection, global normalization, labeled assembly, and leave-one-out
splits by illumination."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .rng import generator
from .scene import position_index
from .transient import PixelArrayFrame

__all__ = [
    "LabeledSample",
    "Dataset",
    "HotPixelMask",
    "subtract_background",
    "detect_hot_pixels",
    "normalize_features",
    "assemble_dataset",
    "loo_split",
    "one_hot",
    "shuffled_indices",
]

MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class LabeledSample:
    """One pixel's processed histogram with its ground-truth labels."""

    features: np.ndarray
    person_id: int
    position_index: int
    illumination_id: int
    pixel_id: int


@dataclass(frozen=True)
class HotPixelMask:
    """Boolean grid of flagged pixels; True marks a hot pixel."""

    grid: np.ndarray

    def __post_init__(self):
        if self.grid.dtype != bool or self.grid.ndim != 2:
            raise ValueError("mask grid must be a 2-d boolean array")
        self.grid.setflags(write=False)

    @property
    def kept_count(self) -> int:
        return int((~self.grid).sum())

    @property
    def flagged_count(self) -> int:
        return int(self.grid.sum())

    def kept_flat(self) -> np.ndarray:
        """Flat indices of pixels that survive, row-major."""
        return np.flatnonzero(~self.grid.reshape(-1))


@dataclass(frozen=True)
class Dataset:
    """Sample matrix plus labels; rows ordered (frame, pixel) lexicographically.

    ``features`` is (n_samples, n_bins); ``person_ids`` are 1..N_c,
    ``position_indices`` 1-based, ``illumination_ids`` 1-based,
    ``pixel_ids`` flat row-major pixel indices. ``scale`` is the single
    global constant every histogram was divided by.
    """

    features: np.ndarray
    person_ids: np.ndarray
    position_indices: np.ndarray
    illumination_ids: np.ndarray
    pixel_ids: np.ndarray
    n_bins: int
    n_classes: int
    n_locations: int
    clothing_mode: str
    scale: float

    def __post_init__(self):
        n = self.features.shape[0]
        for name in ("person_ids", "position_indices", "illumination_ids", "pixel_ids"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per sample")
        if self.features.ndim != 2 or self.features.shape[1] != self.n_bins:
            raise ValueError("features must be (n_samples, n_bins)")

    def __len__(self) -> int:
        return self.features.shape[0]

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(
            features=self.features[i],
            person_id=int(self.person_ids[i]),
            position_index=int(self.position_indices[i]),
            illumination_id=int(self.illumination_ids[i]),
            pixel_id=int(self.pixel_ids[i]),
        )

    def take(self, idx: np.ndarray) -> "Dataset":
        return replace(
            self,
            features=self.features[idx],
            person_ids=self.person_ids[idx],
            position_indices=self.position_indices[idx],
            illumination_ids=self.illumination_ids[idx],
            pixel_ids=self.pixel_ids[idx],
        )


def subtract_background(frame: PixelArrayFrame, background: PixelArrayFrame) -> PixelArrayFrame:
    """Per-bin difference clamped at zero; the frame's labels are kept."""
    if frame.counts.shape != background.counts.shape:
        raise ValueError(
            f"shape mismatch: {frame.counts.shape} vs {background.counts.shape}")
    if frame.bin_width_ps != background.bin_width_ps or frame.t0_ps != background.t0_ps:
        raise ValueError("bin geometry mismatch between frame and background")
    diff = frame.counts.astype(np.int64) - background.counts.astype(np.int64)
    return PixelArrayFrame(
        counts=np.maximum(diff, 0).astype(frame.counts.dtype),
        bin_width_ps=frame.bin_width_ps,
        t0_ps=frame.t0_ps,
        hot_mask=frame.hot_mask.copy(),
        meta=frame.meta,
    )


def detect_hot_pixels(frames: Sequence[PixelArrayFrame],
                      threshold_sigma: float = 5.0) -> HotPixelMask:
    """Flag pixels whose summed counts are robust outliers.

    A pixel is hot when its total over all frames exceeds
    median + threshold_sigma * (1.4826 * MAD) of the per-pixel totals.
    With zero dispersion only strictly-above-median pixels can be flagged,
    so a perfectly uniform array flags nothing.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if threshold_sigma <= 0:
        raise ValueError("threshold_sigma must be positive")
    grid = frames[0].grid
    totals = np.zeros(frames[0].n_pixels, dtype=np.float64)
    for f in frames:
        if f.grid != grid:
            raise ValueError("all frames must share the pixel grid")
        totals += f.pixel_totals()
    median = np.median(totals)
    sigma = MAD_TO_SIGMA * np.median(np.abs(totals - median))
    flagged = totals > median + threshold_sigma * sigma
    return HotPixelMask(grid=flagged.reshape(grid))


def normalize_features(counts, global_scale: float) -> np.ndarray:
    """Divide counts by the single dataset-wide constant."""
    if global_scale <= 0:
        raise ValueError(f"global_scale must be positive, got {global_scale}")
    return np.asarray(counts, dtype=np.float64) / global_scale


def assemble_dataset(frames: Sequence[PixelArrayFrame],
                     backgrounds: Sequence[PixelArrayFrame],
                     mask: HotPixelMask, *,
                     n_classes: Optional[int] = None,
                     n_locations: int = 7) -> Dataset:
    """Build the labeled sample matrix from person-bearing frames.

    Each frame is background-subtracted against the background of its own
    illumination, surviving pixels become one sample each, and all
    features share one normalization constant (the maximum subtracted
    count over the whole assembly). Sample order is (frame, pixel)
    lexicographic with frames ordered (person, position, illumination).
    """
    if not frames:
        raise ValueError("no measurement frames given")
    kept = mask.kept_flat()
    if kept.size == 0:
        raise ValueError("hot-pixel mask keeps no pixels")
    bg_by_illum = {}
    for bg in backgrounds:
        if bg.meta.person_id != 0:
            raise ValueError("backgrounds must be person-free frames")
        bg_by_illum[bg.meta.illumination_id] = bg

    def order_key(f: PixelArrayFrame):
        return (f.meta.person_id, position_index(f.meta.position_name),
                f.meta.illumination_id)

    frames = sorted(frames, key=order_key)
    feats, person_ids, pos_idx, illum_ids, pixel_ids = [], [], [], [], []
    clothing = frames[0].meta.clothing_mode
    n_bins = frames[0].n_bins
    for f in frames:
        if f.meta.person_id == 0:
            raise ValueError("assemble_dataset expects person-bearing frames only")
        if f.n_bins != n_bins or f.grid != mask.grid.shape:
            raise ValueError("inconsistent frame geometry")
        bg = bg_by_illum.get(f.meta.illumination_id)
        if bg is None:
            raise ValueError(
                f"no background for illumination {f.meta.illumination_id}")
        sub = subtract_background(f, bg)
        feats.append(sub.flat_counts()[kept].astype(np.float64))
        n = kept.size
        person_ids.append(np.full(n, f.meta.person_id, dtype=np.int64))
        pos_idx.append(np.full(n, position_index(f.meta.position_name) + 1,
                               dtype=np.int64))
        illum_ids.append(np.full(n, f.meta.illumination_id, dtype=np.int64))
        pixel_ids.append(kept.astype(np.int64))
    features = np.concatenate(feats, axis=0)
    scale = float(features.max())
    if scale <= 0:
        scale = 1.0
    features = normalize_features(features, scale)
    person_arr = np.concatenate(person_ids)
    return Dataset(
        features=features,
        person_ids=person_arr,
        position_indices=np.concatenate(pos_idx),
        illumination_ids=np.concatenate(illum_ids),
        pixel_ids=np.concatenate(pixel_ids),
        n_bins=n_bins,
        n_classes=int(person_arr.max()) if n_classes is None else n_classes,
        n_locations=n_locations,
        clothing_mode=clothing,
        scale=scale,
    )


def loo_split(ds: Dataset, holdout_illumination: int) -> tuple:
    """Partition into (train, test) by holding out one illumination."""
    present = np.unique(ds.illumination_ids)
    if holdout_illumination not in present:
        raise ValueError(
            f"illumination {holdout_illumination} not in dataset (has {present.tolist()})")
    test_mask = ds.illumination_ids == holdout_illumination
    return ds.take(np.flatnonzero(~test_mask)), ds.take(np.flatnonzero(test_mask))


def one_hot(index: int, n: int) -> np.ndarray:
    """Length-n vector with a single 1 at the (1-based) index."""
    if not 1 <= index <= n:
        raise ValueError(f"index {index} out of range 1..{n}")
    v = np.zeros(n, dtype=np.float64)
    v[index - 1] = 1.0
    return v


def shuffled_indices(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic sample permutation for one training epoch."""
    return generator(seed, f"shuffle-epoch:{epoch}").permutation(n)
