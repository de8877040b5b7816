"""Acceptance gate for the shipped pipeline.

Each test prints exactly one pass/fail line, with the measured numbers and
the bound they are held to. Heavy artifacts (the default synthetic dataset,
its cross-validation reports, the head-regime comparison) are built once in
session fixtures and shared. Run with ``pytest tests/test_acceptance.py -s``
to see every line; non-verbose runs show lines of failing checks only.
"""

import dataclasses
import hashlib
import io
import time
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from nlosid import SPEED_OF_LIGHT_M_PER_NS as C
from nlosid.ann.layers import softmax
from nlosid.ann.network import build_network, reduced_architecture
from nlosid.cli import _load_dataset, cmd_simulate, load_run_config, main
from nlosid.dataset import loo_split
from nlosid.eval import compare_joint_vs_separate, run_cross_validation
from nlosid.nlsh import read_manifest
from nlosid.scene import (Patch, PatchSet, Point3, Scene, default_scene,
                          temporal_to_depth)
from nlosid.transient import (DetectorSpec, SimParams, convolve_irf,
                              TemporalHistogram, expected_pixel_histograms,
                              fold_to_window, pixel_aim_offsets,
                              radiometric_weight)

JOINT_TOLERANCE = 0.02


def verdict(index, name, ok, detail):
    line = f"[{index:2d}] {name}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line)
    assert ok, line


# --- shared heavy artifacts -------------------------------------------------

@pytest.fixture(scope="session")
def default_run_dir(tmp_path_factory):
    """Simulate the shipped default scenario once; returns (dir, seconds)."""
    run = load_run_config()
    out = tmp_path_factory.mktemp("accept") / "dataset"
    t0 = time.perf_counter()
    with redirect_stdout(io.StringIO()):
        cmd_simulate(dataclasses.replace(run, out_dir=str(out)))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_dataset(default_run_dir):
    directory, sim_seconds = default_run_dir
    t0 = time.perf_counter()
    ds, mask, _ = _load_dataset(directory)
    return ds, mask, sim_seconds + (time.perf_counter() - t0)


@pytest.fixture(scope="session")
def default_report(default_dataset):
    from nlosid.ann.network import default_architecture
    ds, _, prep_seconds = default_dataset
    run = load_run_config()
    t0 = time.perf_counter()
    report = run_cross_validation(ds, default_architecture(), run.train)
    return report, prep_seconds + (time.perf_counter() - t0)


@pytest.fixture(scope="session")
def same_clothing_report(tmp_path_factory):
    from nlosid.ann.network import default_architecture
    run = load_run_config(clothing_mode="same")
    out = tmp_path_factory.mktemp("accept-same") / "dataset"
    with redirect_stdout(io.StringIO()):
        cmd_simulate(dataclasses.replace(run, out_dir=str(out)))
    ds, _, _ = _load_dataset(out)
    return run_cross_validation(ds, default_architecture(), run.train)


@pytest.fixture(scope="session")
def head_regime_table(default_dataset):
    from nlosid.ann.network import default_architecture
    ds, _, _ = default_dataset
    run = load_run_config()
    return compare_joint_vs_separate(ds, default_architecture(), run.train,
                                     tolerance=JOINT_TOLERANCE)


# --- 1: timing constants ----------------------------------------------------

def test_timing_constants():
    t0 = time.perf_counter()
    depth_cm = temporal_to_depth(120.0)
    det = DetectorSpec()
    checks = {
        "depth(120ps)=1.8cm+-0.01": abs(depth_cm - 1.8) <= 0.01,
        "rep window 12.5ns": det.rep_period_ns == 12.5,
        "32x32 array": det.grid == (32, 32),
        "8e7 pulses": det.pulses_per_acquisition == 80_000_000,
    }
    elapsed = time.perf_counter() - t0
    checks["under 1s"] = elapsed < 1.0
    bad = [k for k, v in checks.items() if not v]
    verdict(1, "timing constants", not bad,
            f"depth {depth_cm:.4f} cm, window {det.rep_period_ns} ns, "
            f"grid {det.grid}, pulses {det.pulses_per_acquisition:.0e}"
            + (f"; failed: {bad}" if bad else ""))


# --- 2: time-of-flight oracle -----------------------------------------------

def test_time_of_flight_oracle():
    t0 = time.perf_counter()
    det = DetectorSpec(dark_rate_per_bin=0.0)
    sim = SimParams(background_peak=0.0, calibration=1.0)
    rng = np.random.default_rng(2026)
    worst = 0
    for case in range(20):
        laser = np.array([rng.uniform(-0.8, 0.8), rng.uniform(0.6, 1.8), 0.0])
        observed = np.array([rng.uniform(-0.8, 0.8), rng.uniform(0.6, 1.8), 0.0])
        center = np.array([rng.uniform(-0.8, 0.8), rng.uniform(0.5, 1.8),
                           rng.uniform(0.8, 2.2)])
        base = default_scene()
        scene = Scene(laser_spot=Point3(*laser), observed_spot=Point3(*observed),
                      wall_normal=base.wall_normal, positions=base.positions,
                      detector_to_wall_distance=rng.uniform(0.5, 2.0),
                      observed_area_side=base.observed_area_side)
        patch = PatchSet(centers=center[None, :],
                         normals=np.array([[0.0, 0.0, -1.0]]),
                         areas=np.array([0.0025]), albedos=np.array([0.6]))
        offsets = pixel_aim_offsets(det, scene.observed_area_side,
                                    aim_seed=case)
        expected = expected_pixel_histograms(scene, patch, det, sim, offsets)
        peaks = expected.argmax(axis=1)
        obs_pts = observed[None, :] + np.concatenate(
            [offsets, np.zeros((det.n_pixels, 1))], axis=1)
        path = (sim.laser_leg_m + np.linalg.norm(laser - center)
                + np.linalg.norm(obs_pts - center[None, :], axis=1)
                + scene.detector_to_wall_distance)
        tof = fold_to_window(path / C, det.rep_period_ns)
        want = (tof / det.bin_width_ns).astype(np.int64) % det.n_bins
        dist = np.abs(peaks - want)
        dist = np.minimum(dist, det.n_bins - dist)
        worst = max(worst, int(dist.max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1 and elapsed < 10.0
    verdict(2, "time-of-flight oracle", ok,
            f"20 geometries x {det.n_pixels} pixels, worst peak offset "
            f"{worst} bins (allow 1), {elapsed:.1f}s (allow 10)")


# --- 3: conservation --------------------------------------------------------

def test_conservation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_rel = 0.0
    for _ in range(100):
        counts = rng.uniform(0.0, 500.0, 250)
        h = TemporalHistogram(counts, bin_width_ps=50.0)
        blurred = convolve_irf(h, rng.uniform(20.0, 400.0))
        worst_rel = max(worst_rel,
                        abs(blurred.counts.sum() - counts.sum()) / counts.sum())
    logits = rng.normal(0.0, 50.0, size=(10_000, 7))
    sums = softmax(logits).sum(axis=1)
    worst_sum = float(np.abs(sums - 1.0).max())
    elapsed = time.perf_counter() - t0
    ok = worst_rel < 1e-9 and worst_sum < 1e-12 and elapsed < 5.0
    verdict(3, "count and probability conservation", ok,
            f"blur total drift {worst_rel:.2e} (allow 1e-9), softmax row "
            f"deviation {worst_sum:.2e} (allow 1e-12), {elapsed:.1f}s (allow 5)")


# --- 4: gradient correctness ------------------------------------------------

def _numeric_gradients(net, x, cidx, lidx, eps=1e-5):
    grads = []
    for p in net.parameters():
        flat = p.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = net.forward_backward(x, cidx, lidx)
            flat[i] = keep - eps
            lo = net.forward_backward(x, cidx, lidx)
            flat[i] = keep
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(p.shape))
    return grads


def test_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        net = build_network(reduced_architecture(), 16, 3, 7, seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.uniform(0.0, 1.0, size=(3, 16))
        cidx = rng.integers(0, 3, size=3)
        lidx = rng.integers(0, 7, size=3)
        numeric = _numeric_gradients(net, x, cidx, lidx)
        net.zero_grads()
        net.forward_backward(x, cidx, lidx)
        for ga, gn in zip(net.gradients(), numeric):
            denom = np.maximum(np.abs(ga) + np.abs(gn), 1e-3)
            worst = max(worst, float((np.abs(ga - gn) / denom).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 30.0
    verdict(4, "analytic vs numeric gradients", ok,
            f"10 seeds, max relative error {worst:.2e} (allow 1e-5), "
            f"{elapsed:.1f}s (allow 30)")


# --- 5: radiometric distance scaling ----------------------------------------

def test_radiometric_scaling():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        center = np.array([rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(1, 2)])
        normal = np.array([rng.normal(), rng.normal(), -abs(rng.normal()) - 0.1])
        normal /= np.linalg.norm(normal)
        patch = Patch(center=Point3(*center), normal=tuple(normal),
                      area=rng.uniform(1e-4, 1e-2), albedo=rng.uniform(0.2, 0.9))
        spots = rng.uniform(-1, 1, size=(2, 3)) * [1, 1, 0]
        near = radiometric_weight(patch, Point3(*spots[0]), Point3(*spots[1]), 1.0)
        if near == 0.0:
            continue
        doubled = [Point3(*(center + 2.0 * (s - center))) for s in spots]
        far = radiometric_weight(patch, doubled[0], doubled[1], 1.0)
        worst = max(worst, abs(far - near / 16.0) / (near / 16.0))
    ok = worst < 1e-12
    verdict(5, "per-segment inverse-square scaling", ok,
            f"doubling both segments vs 1/16: max relative error {worst:.2e} "
            f"(allow 1e-12)")


# --- 6: dataset protocol ----------------------------------------------------

def test_dataset_protocol(default_dataset, default_run_dir):
    ds, mask, prep_seconds = default_dataset
    directory, _ = default_run_dir
    entries = read_manifest(directory)["entries"]
    n_meas = sum(1 for e in entries if e.role == "measurement")
    n_bg = sum(1 for e in entries if e.role == "background")
    folds = [loo_split(ds, h)[1] for h in (1, 2, 3, 4, 5)]
    disjoint = sum(len(f) for f in folds) == len(ds)
    covering = all(np.all(f.illumination_ids == h)
                   for h, f in zip((1, 2, 3, 4, 5), folds))
    checks = {
        "105 measurement frames": n_meas == 105,
        "5 background frames": n_bg == 5,
        "770 <= kept <= 830": 770 <= mask.kept_count <= 830,
        "5 disjoint covering folds": disjoint and covering,
        "under 5min": prep_seconds < 300.0,
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(6, "acquisition protocol and preprocessing", not bad,
            f"{n_meas} measurements + {n_bg} backgrounds, kept "
            f"{mask.kept_count}/1024 pixels, {prep_seconds:.0f}s (allow 300)"
            + (f"; failed: {bad}" if bad else ""))


# --- 7: end-to-end classification -------------------------------------------

def test_end_to_end_classification(default_report):
    report, seconds = default_report
    mean_id = float(np.mean([f.acc_class for f in report.folds]))
    mean_pos = float(np.mean([f.acc_loc for f in report.folds]))
    pos_diag = report.avg_confusion_loc.diagonal()
    db, df = float(pos_diag[5]), float(pos_diag[6])
    majority_ok = all(f.majority_acc_class >= f.acc_class
                      and f.majority_acc_loc >= f.acc_loc
                      for f in report.folds)
    checks = {
        "position >= 0.90": mean_pos >= 0.90,
        "identity >= 0.80": mean_id >= 0.80,
        "Db diagonal >= 0.99": db >= 0.99,
        "Df diagonal >= 0.99": df >= 0.99,
        "majority >= per-pixel on every fold": majority_ok,
        "no embedded property failures": not report.property_failures,
        "within 15min": seconds <= 900.0,
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(7, "end-to-end classification", not bad,
            f"identity {mean_id:.4f} (>=0.80), position {mean_pos:.4f} "
            f"(>=0.90), Db/Df diag {db:.3f}/{df:.3f} (>=0.99), "
            f"{seconds:.0f}s (allow 900)"
            + (f"; failed: {bad}" if bad else ""))


# --- 8: same-clothing degradation -------------------------------------------

def test_same_clothing_degradation(default_report, same_clothing_report):
    base, _ = default_report
    same = same_clothing_report
    id_diff = float(np.mean([f.acc_class for f in base.folds]))
    id_same = float(np.mean([f.acc_class for f in same.folds]))
    pos_diff = float(np.mean([f.acc_loc for f in base.folds]))
    pos_same = float(np.mean([f.acc_loc for f in same.folds]))
    checks = {
        "identity strictly lower": id_same < id_diff,
        "position within 0.05": abs(pos_same - pos_diff) <= 0.05,
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(8, "same-clothing degradation", not bad,
            f"identity {id_same:.4f} < {id_diff:.4f}, position shift "
            f"{abs(pos_same - pos_diff):.4f} (allow 0.05)"
            + (f"; failed: {bad}" if bad else ""))


# --- 9: joint vs separate heads ---------------------------------------------

def test_joint_vs_separate_heads(head_regime_table):
    jvs = head_regime_table
    table_complete = (len(jvs.per_fold) == 15
                      and {row[1] for row in jvs.per_fold}
                      == {"joint", "class", "loc"})
    checks = {
        "joint identity >= separate - 0.02": jvs.joint_ok_class,
        "joint position >= separate - 0.02": jvs.joint_ok_loc,
        "full 5-fold x 3-regime table": table_complete,
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(9, "joint vs separate heads", not bad,
            f"joint ({jvs.joint[0]:.4f}, {jvs.joint[1]:.4f}) vs identity-only "
            f"{jvs.identity_only[0]:.4f}, position-only {jvs.position_only[1]:.4f}, "
            f"tolerance {jvs.tolerance}"
            + (f"; failed: {bad}" if bad else ""))


# --- 10: byte-level reproducibility -----------------------------------------

REPRO_CFG = """
detector.grid = 8
person.1.height = 1.74
person.1.shoulder_width = 0.457
person.1.torso_depth = 0.257
person.1.head_radius = 0.095
person.1.clothing_albedo = 0.45
person.1.skin_albedo = 0.445
person.2.height = 1.77
person.2.shoulder_width = 0.463
person.2.torso_depth = 0.263
person.2.head_radius = 0.095
person.2.clothing_albedo = 0.75
person.2.skin_albedo = 0.455
run.illuminations = 2
run.seed = 33
train.learning_rate = 3e-3
train.epochs = 4
train.batch_size = 32
train.patience = 4
"""


def _digest_tree(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(directory).rglob("*")) if p.is_file()}


def test_reproducibility(tmp_path):
    cfg = tmp_path / "repro.cfg"
    cfg.write_text(REPRO_CFG)
    codes = []
    for tag in ("a", "b"):
        ds_dir = tmp_path / f"ds-{tag}"
        with redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
            codes.append(main(["simulate", "--config", str(cfg),
                               "--out", str(ds_dir)]))
            codes.append(main(["train-eval", str(ds_dir), "--config", str(cfg),
                               "--out", str(tmp_path / f"rep-{tag}")]))
    frames_equal = _digest_tree(tmp_path / "ds-a") == _digest_tree(tmp_path / "ds-b")
    rep_a, rep_b = _digest_tree(tmp_path / "rep-a"), _digest_tree(tmp_path / "rep-b")
    nets_equal = all(rep_a[n] == rep_b[n] for n in rep_a if n.endswith(".nlnw"))
    json_equal = rep_a["report.json"] == rep_b["report.json"]
    has_parts = any(n.endswith(".nlnw") for n in rep_a) and "report.json" in rep_a
    checks = {
        "frame files byte-identical": frames_equal,
        "network files byte-identical": nets_equal and has_parts,
        "json report byte-identical": json_equal,
        "consistent exit codes": codes[0] == codes[2] and codes[1] == codes[3],
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(10, "rerun reproducibility", not bad,
            f"two pipeline runs, {len(_digest_tree(tmp_path / 'ds-a'))} frame "
            f"files + {sum(1 for n in rep_a if n.endswith('.nlnw'))} networks + "
            f"json compared" + (f"; failed: {bad}" if bad else ""))
