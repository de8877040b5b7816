"""Forward model for per-pixel single-photon echo histograms.

A laser pulse bounces wall -> hidden target -> wall; each target patch
deposits its expected photon count (three-bounce radiometry with
per-segment inverse-square falloff and Lambertian cosine factors) at the
arrival-time bin, folded into one repetition window. The expected
histogram is then blurred by the detector timing response, a stationary
wall-background hump and dark counts are added, and photon shot noise is
drawn per bin. A fraction of pixels is replaced by saturated uniform
noise to mimic hot detector elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import SPEED_OF_LIGHT_M_PER_NS
from .kernels import deposit_bins
from .rng import derive_seed, generator
from .scene import PatchSet, PersonSpec, Point3, Scene, discretize_person

__all__ = [
    "DetectorSpec",
    "SimParams",
    "TemporalHistogram",
    "FrameMeta",
    "PixelArrayFrame",
    "radiometric_weight",
    "ideal_transient",
    "convolve_irf",
    "fold_to_window",
    "sample_poisson",
    "simulate_frame",
    "pixel_aim_offsets",
    "detector_from_config",
    "sim_params_from_config",
]

_U32_MAX = np.iinfo(np.uint32).max


@dataclass(frozen=True)
class DetectorSpec:
    """Timing and array properties of the single-photon detector."""

    grid: tuple = (32, 32)
    irf_fwhm_ps: float = 120.0
    bin_width_ps: float = 50.0
    rep_period_ns: float = 12.5
    pulses_per_acquisition: int = 80_000_000
    hot_pixel_fraction: float = 0.22
    dark_rate_per_bin: float = 1.0

    def __post_init__(self):
        rows, cols = self.grid
        if rows < 1 or cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.grid}")
        if self.irf_fwhm_ps < 0:
            raise ValueError("irf_fwhm_ps must be non-negative")
        if self.bin_width_ps <= 0 or self.rep_period_ns <= 0:
            raise ValueError("bin width and repetition period must be positive")
        n = self.rep_period_ns * 1000.0 / self.bin_width_ps
        if abs(n - round(n)) > 1e-9:
            raise ValueError(
                f"bins must tile the repetition window exactly: "
                f"{self.rep_period_ns} ns / {self.bin_width_ps} ps = {n}")
        if self.pulses_per_acquisition < 1:
            raise ValueError("pulses_per_acquisition must be positive")
        if not 0.0 <= self.hot_pixel_fraction < 1.0:
            raise ValueError("hot_pixel_fraction must be in [0, 1)")
        if self.dark_rate_per_bin < 0:
            raise ValueError("dark_rate_per_bin must be non-negative")

    @property
    def n_bins(self) -> int:
        return round(self.rep_period_ns * 1000.0 / self.bin_width_ps)

    @property
    def n_pixels(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def bin_width_ns(self) -> float:
        return self.bin_width_ps / 1000.0


@dataclass(frozen=True)
class SimParams:
    """Free knobs of the forward model, all settable from the run config.

    ``calibration`` scales every radiometric weight; the default aims the
    brightest pixel of a default person-at-C frame at a peak expected
    count of roughly 300 per acquisition.
    """

    calibration: float = 1.35e-3
    laser_leg_m: float = 1.3
    background_peak: float = 30.0
    background_center_ns: float = 11.5
    background_fwhm_ns: float = 0.5
    hot_saturation: int = 1000
    patch_side_m: float = 0.05

    def __post_init__(self):
        if self.calibration <= 0:
            raise ValueError("calibration must be positive")
        if self.laser_leg_m < 0 or self.background_peak < 0:
            raise ValueError("laser leg and background amplitude must be non-negative")
        if self.background_fwhm_ns <= 0 or self.patch_side_m <= 0:
            raise ValueError("background width and patch side must be positive")
        if self.hot_saturation < 1:
            raise ValueError("hot_saturation must be at least 1")


@dataclass(frozen=True)
class TemporalHistogram:
    """Photon counts per arrival-time bin over one repetition window."""

    counts: np.ndarray
    bin_width_ps: float
    t0_ps: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.shape[0] < 1:
            raise ValueError("counts must be a non-empty 1-d array")
        if self.bin_width_ps <= 0:
            raise ValueError("bin_width_ps must be positive")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return self.counts.shape[0]

    def total(self) -> float:
        return float(self.counts.sum(dtype=np.float64))


@dataclass(frozen=True)
class FrameMeta:
    """Acquisition labels: who stood where, under which illumination."""

    person_id: int
    position_name: Optional[str]
    illumination_id: int
    clothing_mode: str
    seed: int

    def __post_init__(self):
        if self.person_id < 0:
            raise ValueError("person_id must be >= 0 (0 = background)")
        if (self.person_id == 0) != (self.position_name is None):
            raise ValueError("position_name must be given iff a person is present")
        if self.clothing_mode not in ("same", "different"):
            raise ValueError(f"clothing_mode must be same|different, got {self.clothing_mode!r}")
        if self.illumination_id < 1:
            raise ValueError("illumination_id must be >= 1")


@dataclass(frozen=True)
class PixelArrayFrame:
    """One full-array acquisition: counts indexed (row, col, bin)."""

    counts: np.ndarray
    bin_width_ps: float
    t0_ps: float
    hot_mask: np.ndarray
    meta: FrameMeta

    def __post_init__(self):
        if self.counts.ndim != 3:
            raise ValueError("counts must be (rows, cols, n_bins)")
        if self.hot_mask.shape != self.counts.shape[:2]:
            raise ValueError("hot_mask shape must match the pixel grid")
        self.counts.setflags(write=False)
        self.hot_mask.setflags(write=False)

    @property
    def grid(self) -> tuple:
        return self.counts.shape[:2]

    @property
    def n_bins(self) -> int:
        return self.counts.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.counts.shape[0] * self.counts.shape[1]

    def histogram(self, row: int, col: int) -> TemporalHistogram:
        return TemporalHistogram(
            counts=self.counts[row, col].copy(),
            bin_width_ps=self.bin_width_ps,
            t0_ps=self.t0_ps,
        )

    def flat_counts(self) -> np.ndarray:
        """Counts reshaped to (n_pixels, n_bins), row-major pixel order."""
        return self.counts.reshape(self.n_pixels, self.n_bins)

    def pixel_totals(self) -> np.ndarray:
        """Total counts per pixel, shape (n_pixels,)."""
        return self.flat_counts().sum(axis=1, dtype=np.float64)


def fold_to_window(tof_ns, rep_period_ns: float):
    """Arrival time modulo the laser repetition period, in [0, period)."""
    if rep_period_ns <= 0:
        raise ValueError("rep_period_ns must be positive")
    out = np.mod(np.asarray(tof_ns, dtype=np.float64), rep_period_ns)
    return float(out) if out.ndim == 0 else out


def radiometric_weight(patch, laser_spot, observed_spot, emitted_energy: float,
                       calibration: float = 1.0) -> float:
    """Expected photons from one patch for a three-bounce echo.

    Per-segment inverse-square falloff with Lambertian cosine factors:
    emitted_energy * albedo * area * cos_in * cos_out / (d1^2 * d2^2),
    times the fixed calibration constant. Back-facing patches return 0.
    """
    center = patch.center.as_array()
    normal = np.asarray(patch.normal, dtype=np.float64)
    to_laser = np.asarray(laser_spot.as_array() if isinstance(laser_spot, Point3)
                          else laser_spot, dtype=np.float64) - center
    to_obs = np.asarray(observed_spot.as_array() if isinstance(observed_spot, Point3)
                        else observed_spot, dtype=np.float64) - center
    d1 = float(np.linalg.norm(to_laser))
    d2 = float(np.linalg.norm(to_obs))
    if d1 == 0.0 or d2 == 0.0:
        raise ValueError("patch coincides with a wall spot")
    cos_in = float(np.dot(normal, to_laser)) / d1
    cos_out = float(np.dot(normal, to_obs)) / d2
    if cos_in <= 0.0 or cos_out <= 0.0:
        return 0.0
    return (emitted_energy * calibration * patch.albedo * patch.area
            * cos_in * cos_out / (d1 * d1 * d2 * d2))


def _patch_weights_and_paths(patches: PatchSet, laser: np.ndarray,
                             observed: np.ndarray, emitted_energy: float,
                             calibration: float):
    """Vectorized weights and wall-to-wall path lengths for one observed point."""
    to_laser = laser[None, :] - patches.centers
    to_obs = observed[None, :] - patches.centers
    d1 = np.linalg.norm(to_laser, axis=1)
    d2 = np.linalg.norm(to_obs, axis=1)
    cos_in = np.maximum(np.einsum("ij,ij->i", patches.normals, to_laser) / d1, 0.0)
    cos_out = np.maximum(np.einsum("ij,ij->i", patches.normals, to_obs) / d2, 0.0)
    w = (emitted_energy * calibration * patches.albedos * patches.areas
         * cos_in * cos_out / (d1 * d1 * d2 * d2))
    return w, d1 + d2


def ideal_transient(scene: Scene, patches: PatchSet, detector: DetectorSpec,
                    pixel_jitter: Point3 = Point3(0.0, 0.0, 0.0), *,
                    emitted_energy: float = 1.0, calibration: float = 1.0,
                    laser_leg_m: float = 0.0) -> TemporalHistogram:
    """Expected noiseless histogram before timing blur.

    Each patch deposits its radiometric weight at the bin containing its
    folded arrival time. ``pixel_jitter`` offsets the observed spot to the
    aim point of one particular pixel; the fixed laser and detector legs
    shift every path by a common constant.
    """
    if len(patches) == 0:
        raise ValueError("patches must be non-empty")
    observed = scene.observed_spot.as_array() + pixel_jitter.as_array()
    w, path = _patch_weights_and_paths(
        patches, scene.laser_spot.as_array(), observed, emitted_energy, calibration)
    total_path = laser_leg_m + path + scene.detector_to_wall_distance
    tof = fold_to_window(total_path / SPEED_OF_LIGHT_M_PER_NS, detector.rep_period_ns)
    bins = np.floor_divide(tof, detector.bin_width_ns).astype(np.int64) % detector.n_bins
    counts = deposit_bins(bins, w, detector.n_bins)
    return TemporalHistogram(counts=counts, bin_width_ps=detector.bin_width_ps)


def _irf_taps(fwhm_ps: float, bin_width_ps: float, n_bins: int):
    """Unit-sum Gaussian taps and their circular bin offsets."""
    sigma_bins = fwhm_ps / (2.0 * math.sqrt(2.0 * math.log(2.0))) / bin_width_ps
    reach = min(int(math.ceil(5.0 * sigma_bins)), n_bins // 2)
    offsets = np.arange(-reach, reach + 1)
    taps = np.exp(-0.5 * (offsets / sigma_bins) ** 2)
    return offsets, taps / taps.sum()


def _convolve_window(arr: np.ndarray, fwhm_ps: float, bin_width_ps: float) -> np.ndarray:
    """Circular Gaussian blur along the last axis; identity for fwhm 0."""
    if fwhm_ps == 0.0:
        return arr.copy()
    offsets, taps = _irf_taps(fwhm_ps, bin_width_ps, arr.shape[-1])
    out = np.zeros_like(arr, dtype=np.float64)
    for off, tap in zip(offsets, taps):
        out += tap * np.roll(arr, off, axis=-1)
    return out


def convolve_irf(h: TemporalHistogram, fwhm_ps: float) -> TemporalHistogram:
    """Blur a histogram by the detector timing response (circular, count-preserving)."""
    if fwhm_ps < 0:
        raise ValueError("fwhm_ps must be non-negative")
    if fwhm_ps == 0.0:
        return h
    counts = _convolve_window(np.asarray(h.counts, dtype=np.float64), fwhm_ps,
                              h.bin_width_ps)
    return TemporalHistogram(counts=np.maximum(counts, 0.0),
                             bin_width_ps=h.bin_width_ps, t0_ps=h.t0_ps)


def sample_poisson(expected: TemporalHistogram, seed: int) -> TemporalHistogram:
    """Draw integer photon counts, one independent Poisson variate per bin."""
    lam = np.asarray(expected.counts, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise ValueError("expected counts must be finite")
    counts = generator(seed, "poisson").poisson(lam).astype(np.uint32)
    return TemporalHistogram(counts=counts, bin_width_ps=expected.bin_width_ps,
                             t0_ps=expected.t0_ps)


def pixel_aim_offsets(detector: DetectorSpec, side_m: float, aim_seed: int) -> np.ndarray:
    """Wall-plane aim offsets of every pixel, shape (n_pixels, 2).

    Each pixel observes its own point of the imaged wall area, drawn
    uniformly within the square of the given side. Drawing from a
    dedicated seed keeps pixel aims fixed across the frames of a run, so
    a pixel is the same physical observer in measurement and background.
    """
    rng = generator(aim_seed, "pixel-aim")
    return rng.uniform(-side_m / 2.0, side_m / 2.0, size=(detector.n_pixels, 2))


def _background_rate(detector: DetectorSpec, sim: SimParams) -> np.ndarray:
    """Stationary expected counts per bin: smooth wall hump plus dark counts."""
    t = (np.arange(detector.n_bins) + 0.5) * detector.bin_width_ns
    sigma = sim.background_fwhm_ns / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    hump = sim.background_peak * np.exp(
        -0.5 * ((t - sim.background_center_ns) / sigma) ** 2)
    return hump + detector.dark_rate_per_bin


def expected_pixel_histograms(scene: Scene, patches: Optional[PatchSet],
                              detector: DetectorSpec, sim: SimParams,
                              aim_offsets: np.ndarray) -> np.ndarray:
    """Post-blur expected counts for all pixels, shape (n_pixels, n_bins)."""
    n_pix = detector.n_pixels
    n_bins = detector.n_bins
    expected = np.zeros((n_pix, n_bins), dtype=np.float64)
    if patches is not None and len(patches) > 0:
        laser = scene.laser_spot.as_array()
        obs = scene.observed_spot.as_array()[None, :] + np.concatenate(
            [aim_offsets, np.zeros((n_pix, 1))], axis=1)
        centers = patches.centers
        to_laser = laser[None, :] - centers
        d1 = np.linalg.norm(to_laser, axis=1)
        cos_in = np.maximum(np.einsum("ij,ij->i", patches.normals, to_laser) / d1, 0.0)
        # per-pixel legs: (n_pixels, n_patches)
        diff = obs[:, None, :] - centers[None, :, :]
        d2 = np.linalg.norm(diff, axis=2)
        cos_out = np.maximum(np.einsum("ij,pij->pi", patches.normals, diff) / d2, 0.0)
        w = (detector.pulses_per_acquisition * sim.calibration
             * patches.albedos[None, :] * patches.areas[None, :]
             * cos_in[None, :] * cos_out / (d1[None, :] ** 2 * d2 * d2))
        total_path = sim.laser_leg_m + d1[None, :] + d2 + scene.detector_to_wall_distance
        tof = fold_to_window(total_path / SPEED_OF_LIGHT_M_PER_NS, detector.rep_period_ns)
        bins = np.floor_divide(tof, detector.bin_width_ns).astype(np.int64) % n_bins
        flat = (np.arange(n_pix, dtype=np.int64)[:, None] * n_bins + bins).ravel()
        expected = deposit_bins(flat, w.ravel(), n_pix * n_bins).reshape(n_pix, n_bins)
    expected += _background_rate(detector, sim)[None, :]
    return _convolve_window(expected, detector.irf_fwhm_ps, detector.bin_width_ps)


def simulate_frame(scene: Scene, person: Optional[PersonSpec],
                   position_name: Optional[str], detector: DetectorSpec,
                   illumination_id: int, seed: int, *,
                   sim: SimParams = SimParams(), clothing_mode: str = "different",
                   noiseless: bool = False, aim_seed: Optional[int] = None,
                   hot_seed: Optional[int] = None) -> PixelArrayFrame:
    """Simulate one full-array acquisition.

    ``seed`` drives this frame's shot noise; ``aim_seed`` and ``hot_seed``
    default to values derived from it but should be shared across the
    frames of a run so pixel aims and the hot-pixel set stay fixed.
    ``noiseless`` skips shot noise and hot-pixel injection, rounding the
    expected counts instead (for oracle tests).
    """
    if (person is None) != (position_name is None):
        raise ValueError("position_name must be given iff person is given")
    if aim_seed is None:
        aim_seed = derive_seed(seed, "pixel-aim-root")
    if hot_seed is None:
        hot_seed = derive_seed(seed, "hot-pixel-root")
    patches = None
    if person is not None:
        patches = discretize_person(person, scene.anchor(position_name), sim.patch_side_m)
    aim_offsets = pixel_aim_offsets(detector, scene.observed_area_side, aim_seed)
    expected = expected_pixel_histograms(scene, patches, detector, sim, aim_offsets)

    rows, cols = detector.grid
    n_pix, n_bins = expected.shape
    if noiseless:
        counts = np.clip(np.rint(expected), 0, _U32_MAX).astype(np.uint32)
        hot_mask = np.zeros(n_pix, dtype=bool)
    else:
        counts = np.empty((n_pix, n_bins), dtype=np.uint32)
        for i in range(n_pix):
            counts[i] = generator(seed, f"poisson:{i}").poisson(expected[i])
        n_hot = round(detector.hot_pixel_fraction * n_pix)
        hot_idx = generator(hot_seed, "hot-pixels").permutation(n_pix)[:n_hot]
        hot_mask = np.zeros(n_pix, dtype=bool)
        hot_mask[hot_idx] = True
        for i in hot_idx:
            counts[i] = generator(seed, f"hot:{i}").integers(
                0, sim.hot_saturation + 1, size=n_bins, dtype=np.uint32)
    meta = FrameMeta(
        person_id=0 if person is None else person.person_id,
        position_name=position_name,
        illumination_id=illumination_id,
        clothing_mode=clothing_mode,
        seed=seed,
    )
    return PixelArrayFrame(
        counts=counts.reshape(rows, cols, n_bins),
        bin_width_ps=detector.bin_width_ps,
        t0_ps=0.0,
        hot_mask=hot_mask.reshape(rows, cols),
        meta=meta,
    )


def detector_from_config(cfg: Mapping) -> DetectorSpec:
    """Build a DetectorSpec from `detector.*` config keys (defaults fill gaps)."""
    spec = DetectorSpec()
    grid = cfg.get("detector.grid", spec.grid)
    if isinstance(grid, tuple):
        grid = (int(grid[0]), int(grid[1]))
    else:
        grid = (int(grid), int(grid))
    return DetectorSpec(
        grid=grid,
        irf_fwhm_ps=float(cfg.get("detector.irf_fwhm_ps", spec.irf_fwhm_ps)),
        bin_width_ps=float(cfg.get("detector.bin_width_ps", spec.bin_width_ps)),
        rep_period_ns=float(cfg.get("detector.rep_period_ns", spec.rep_period_ns)),
        pulses_per_acquisition=int(cfg.get("detector.pulses_per_acquisition",
                                           spec.pulses_per_acquisition)),
        hot_pixel_fraction=float(cfg.get("detector.hot_pixel_fraction",
                                         spec.hot_pixel_fraction)),
        dark_rate_per_bin=float(cfg.get("detector.dark_rate_per_bin",
                                        spec.dark_rate_per_bin)),
    )


def sim_params_from_config(cfg: Mapping) -> SimParams:
    """Build SimParams from `sim.*` config keys (defaults fill gaps)."""
    base = SimParams()
    return SimParams(
        calibration=float(cfg.get("sim.calibration", base.calibration)),
        laser_leg_m=float(cfg.get("sim.laser_leg_m", base.laser_leg_m)),
        background_peak=float(cfg.get("sim.background_peak", base.background_peak)),
        background_center_ns=float(cfg.get("sim.background_center_ns",
                                           base.background_center_ns)),
        background_fwhm_ns=float(cfg.get("sim.background_fwhm_ns",
                                         base.background_fwhm_ns)),
        hot_saturation=int(cfg.get("sim.hot_saturation", base.hot_saturation)),
        patch_side_m=float(cfg.get("sim.patch_side_m", base.patch_side_m)),
    )
