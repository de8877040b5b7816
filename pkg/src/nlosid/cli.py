"""Command-line pipeline driver.

Three subcommands share one config format and one seed-derivation scheme:
``simulate`` renders a hidden-person dataset to NLSH frames, ``train-eval``
runs preprocessing plus leave-one-illumination-out cross-validation and
writes the report bundle, and ``inspect`` dumps a single frame.

Exit codes: 0 success, 1 usage or config error, 2 broken or incomplete
data, 3 an evaluation property failed (the report is still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nlosid.ann.network import (NetworkFormatError, default_architecture,
                                save_network)
from nlosid.ann.train import TrainConfig, TrainingDiverged
from nlosid.config import ConfigError, default_config_path, parse_config
from nlosid.dataset import assemble_dataset, detect_hot_pixels
from nlosid.eval import (compare_joint_vs_separate, render_text_summary,
                         run_cross_validation,
                         within_vs_across_illumination_errors,
                         write_report_files)
from nlosid.nlsh import (ManifestEntry, NlshFormatError, read_frame,
                         read_manifest, write_frame, write_manifest)
from nlosid.rng import derive_seed
from nlosid.scene import (PersonSpec, Scene, default_scene,
                          persons_from_config, scene_from_config)
from nlosid.transient import (DetectorSpec, SimParams, detector_from_config,
                              sim_params_from_config, simulate_frame)

SPARK_CHARS = " .:-=+*#%@"


class UsageError(Exception):
    """Bad flags or arguments; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs, resolved from config plus flags."""

    scene: Scene
    persons: tuple
    detector: DetectorSpec
    sim: SimParams
    clothing_mode: str
    illuminations: int
    out_dir: str
    seed: int
    same_clothing_albedo: float
    train: TrainConfig
    joint_tolerance: float

    def __post_init__(self):
        if self.illuminations < 2:
            raise ValueError(
                f"illuminations must be >= 2, got {self.illuminations}")
        if len(self.persons) < 2:
            raise ValueError("the roster needs at least 2 people")
        if self.clothing_mode not in ("same", "different"):
            raise ValueError(
                f"clothing_mode must be same or different, "
                f"got {self.clothing_mode!r}")
        if not 0.0 <= self.same_clothing_albedo <= 1.0:
            raise ValueError("same_clothing_albedo must lie in [0, 1]")

    @property
    def n_classes(self) -> int:
        return len(self.persons)

    def effective_roster(self) -> tuple:
        """The roster as simulated: one shared garment in same-clothing mode."""
        if self.clothing_mode == "different":
            return self.persons
        return tuple(dataclasses.replace(p,
                                         clothing_albedo=self.same_clothing_albedo)
                     for p in self.persons)


def load_run_config(config_path=None, seed=None, out_dir=None,
                    clothing_mode=None) -> RunConfig:
    """Parse the config file and fold in command-line overrides."""
    path = Path(config_path) if config_path else default_config_path()
    try:
        cfg = parse_config(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    scene = (scene_from_config(cfg)
             if any(k.startswith("scene.") for k in cfg) else default_scene())
    run_seed = int(seed if seed is not None else cfg.get("run.seed", 0))
    train = TrainConfig(
        learning_rate=float(cfg.get("train.learning_rate", 1e-3)),
        epochs=int(cfg.get("train.epochs", 200)),
        batch_size=int(cfg.get("train.batch_size", 64)),
        seed=run_seed,
        optimizer=str(cfg.get("train.optimizer", "adam")),
        momentum=float(cfg.get("train.momentum", 0.9)),
        beta1=float(cfg.get("train.beta1", 0.9)),
        beta2=float(cfg.get("train.beta2", 0.999)),
        patience=int(cfg.get("train.patience", 10)),
        holdout_fraction=float(cfg.get("train.holdout_fraction", 0.1)))
    return RunConfig(
        scene=scene,
        persons=persons_from_config(cfg),
        detector=detector_from_config(cfg),
        sim=sim_params_from_config(cfg),
        clothing_mode=str(clothing_mode if clothing_mode is not None
                          else cfg.get("run.clothing_mode", "different")),
        illuminations=int(cfg.get("run.illuminations", 5)),
        out_dir=str(out_dir if out_dir is not None
                    else cfg.get("run.out_dir", "nlos-run")),
        seed=run_seed,
        same_clothing_albedo=float(cfg.get("run.same_clothing_albedo", 0.55)),
        train=train,
        joint_tolerance=float(cfg.get("run.joint_tolerance", 0.02)))


def _frame_name(person_id, position_name, illumination_id) -> str:
    if person_id == 0:
        return f"background_ill{illumination_id}.nlsh"
    return f"person{person_id}_pos{position_name}_ill{illumination_id}.nlsh"


def cmd_simulate(run: RunConfig, noiseless: bool = False) -> Path:
    """Render every measurement and background frame, then the manifest."""
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    roster = run.effective_roster()
    aim_seed = derive_seed(run.seed, "pixel-aim")
    hot_seed = derive_seed(run.seed, "hot-pixels")
    entries = []

    def render(person, position_name, illumination):
        pid = 0 if person is None else person.person_id
        frame_seed = derive_seed(
            run.seed, f"frame:{pid}:{position_name or '-'}:{illumination}")
        frame = simulate_frame(
            run.scene, person, position_name, run.detector, illumination,
            frame_seed, sim=run.sim, clothing_mode=run.clothing_mode,
            noiseless=noiseless, aim_seed=aim_seed, hot_seed=hot_seed)
        name = _frame_name(pid, position_name, illumination)
        write_frame(frame, out / name)
        entries.append(ManifestEntry(name, "background" if person is None
                                     else "measurement", pid, position_name,
                                     illumination))

    position_names = tuple(run.scene.positions)
    for illumination in range(1, run.illuminations + 1):
        render(None, None, illumination)
        for person in roster:
            for position_name in position_names:
                render(person, position_name, illumination)
        print(f"illumination {illumination}: "
              f"{1 + len(roster) * len(position_names)} frames")

    extra = {f"person.{p.person_id}.clothing_albedo": repr(p.clothing_albedo)
             for p in roster}
    write_manifest(out, entries, clothing_mode=run.clothing_mode,
                   seed=run.seed, extra=extra)
    print(f"wrote {len(entries)} frames and manifest to {out}")
    return out


def _load_dataset(dataset_dir: Path):
    """Manifest-checked load of every frame, hot detection, and assembly."""
    manifest = read_manifest(dataset_dir)
    measurements, backgrounds = [], []
    for entry in manifest["entries"]:
        frame = read_frame(dataset_dir / entry.filename)
        if entry.role == "background":
            backgrounds.append(frame)
        else:
            measurements.append(frame)
    if not measurements or not backgrounds:
        raise NlshFormatError(
            f"{dataset_dir}: dataset needs both measurement and background frames")
    mask = detect_hot_pixels(measurements + backgrounds)
    ds = assemble_dataset(measurements, backgrounds, mask)
    return ds, mask, manifest


def cmd_train_eval(run: RunConfig, dataset_dir, holdout=None,
                   joint_vs_separate: bool = False, out_dir=None) -> int:
    """Preprocess, cross-validate, emit the report bundle; 3 on property failure."""
    dataset_dir = Path(dataset_dir)
    ds, mask, _ = _load_dataset(dataset_dir)
    print(f"dataset: {len(ds)} samples from {dataset_dir} "
          f"({mask.kept_count} pixels kept, {mask.flagged_count} flagged hot)")

    holdouts = None if holdout is None else [holdout]
    arch = default_architecture()
    report = run_cross_validation(ds, arch, run.train, holdouts=holdouts)
    spread = within_vs_across_illumination_errors(report)
    jvs = None
    if joint_vs_separate:
        jvs = compare_joint_vs_separate(ds, arch, run.train,
                                        tolerance=run.joint_tolerance,
                                        holdouts=holdouts)

    report_dir = Path(out_dir) if out_dir is not None else dataset_dir / "report"
    paths = write_report_files(report, report_dir, jvs, spread)
    for fold in report.folds:
        net_path = report_dir / f"network_fold{fold.holdout_id}.nlnw"
        save_network(fold.network, net_path)
        paths.append(net_path)
    print(render_text_summary(report, jvs, spread))
    print(f"report files: {', '.join(p.name for p in sorted(paths))}")
    print(f"written to {report_dir}")

    if report.property_failures:
        return 3
    if jvs is not None and not (jvs.joint_ok_class and jvs.joint_ok_loc):
        return 3
    return 0


def _sparkline(counts: np.ndarray) -> str:
    top = counts.max()
    if top == 0:
        return " " * counts.size
    scaled = np.ceil(counts / top * (len(SPARK_CHARS) - 1)).astype(int)
    return "".join(SPARK_CHARS[v] for v in scaled)


def cmd_inspect(path) -> int:
    """Dump one frame: header, per-pixel totals, brightest-pixel sparkline."""
    frame = read_frame(path)
    meta = frame.meta
    rows, cols = frame.grid
    totals = frame.pixel_totals()
    print(f"file = {path}")
    print(f"format = NLSH, {rows * cols} pixels ({rows} x {cols}), "
          f"{frame.n_bins} bins")
    print(f"bin_width_ps = {frame.bin_width_ps}")
    print(f"t0_ps = {frame.t0_ps}")
    if meta.person_id == 0:
        print("person = 0 (background)")
        print("position = -")
    else:
        print(f"person = {meta.person_id}")
        print(f"position = {meta.position_name}")
    print(f"illumination = {meta.illumination_id}")
    print(f"clothing_mode = {meta.clothing_mode}")
    print(f"seed = {meta.seed}")
    print(f"total counts = {int(totals.sum())}")
    print("per-pixel totals:")
    grid = totals.reshape(rows, cols)
    width = len(str(int(grid.max()))) + 1
    for r in range(rows):
        print("  " + "".join(f"{int(v):>{width}}" for v in grid[r]))
    flat_best = int(totals.argmax())
    r, c = divmod(flat_best, cols)
    print(f"brightest pixel = ({r}, {c}), total {int(totals[flat_best])}")
    print(f"histogram ({frame.n_bins} bins, '{SPARK_CHARS[-1]}' = "
          f"{int(frame.counts[r, c].max())} counts):")
    print(_sparkline(frame.counts[r, c].astype(np.float64)))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="nlosid",
                     description="Hidden-person identification pipeline: "
                                 "simulate, train-eval, inspect.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="render a synthetic dataset")
    sim.add_argument("--config", help="config file (defaults to the built-in)")
    sim.add_argument("--seed", type=int, help="override run.seed")
    sim.add_argument("--noiseless", action="store_true",
                     help="skip shot noise and hot pixels")
    sim.add_argument("--clothing-mode", choices=("same", "different"),
                     help="override run.clothing_mode")
    sim.add_argument("--out", help="dataset output directory")

    te = sub.add_parser("train-eval", help="cross-validate on a dataset")
    te.add_argument("dataset_dir", help="directory holding NLSH frames + manifest")
    te.add_argument("--config", help="config file (defaults to the built-in)")
    te.add_argument("--seed", type=int, help="override run.seed")
    te.add_argument("--holdout", type=int,
                    help="run only the fold holding out this illumination")
    te.add_argument("--joint-vs-separate", action="store_true",
                    help="also train single-head baselines per fold")
    te.add_argument("--out", help="report output directory")

    ins = sub.add_parser("inspect", help="dump an NLSH frame")
    ins.add_argument("nlsh_file", help="frame file to inspect")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "simulate":
            run = load_run_config(args.config, args.seed, args.out,
                                  args.clothing_mode)
            cmd_simulate(run, noiseless=args.noiseless)
            return 0
        if args.command == "train-eval":
            run = load_run_config(args.config, args.seed)
            return cmd_train_eval(run, args.dataset_dir, holdout=args.holdout,
                                  joint_vs_separate=args.joint_vs_separate,
                                  out_dir=args.out)
        return cmd_inspect(args.nlsh_file)
    except (NlshFormatError, NetworkFormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, ValueError, TrainingDiverged) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
