"""Cross-validation harness: leave-one-illumination-out folds, per-pixel
accuracies, row-normalized confusion matrices, per-measurement majority
votes, and the joint-versus-separate-heads comparison."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from nlosid.ann.network import TwoHeadNetwork, build_network
from nlosid.ann.train import TrainConfig, train
from nlosid.dataset import Dataset, loo_split
from nlosid.rng import derive_seed
from nlosid.scene import POSITION_NAMES

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ConfusionMatrix:
    """n x n table of truth (rows) against prediction (columns)."""

    entries: np.ndarray
    n: int
    row_normalized: bool
    unsupported_rows: tuple = ()

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (self.n, self.n):
            raise ValueError(f"entries shape {entries.shape} != ({self.n}, {self.n})")
        if np.any(entries < 0.0):
            raise ValueError("confusion entries must be nonnegative")
        if self.row_normalized:
            sums = entries.sum(axis=1)
            for i, total in enumerate(sums):
                if (i + 1) not in self.unsupported_rows and abs(total - 1.0) > ROW_SUM_TOL:
                    raise ValueError(
                        f"row {i + 1} sums to {total!r}, not 1 within {ROW_SUM_TOL}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries)


@dataclass(frozen=True)
class MajorityVerdict:
    """One vote over every kept pixel of a single measurement."""

    person_id: int
    position_index: int
    person_verdict: int
    position_verdict: int
    n_pixels: int


@dataclass(frozen=True)
class FoldResult:
    holdout_id: int
    n_test: int
    acc_class: float
    acc_loc: float
    confusion_class: ConfusionMatrix
    confusion_loc: ConfusionMatrix
    verdicts: tuple
    majority_acc_class: float
    majority_acc_loc: float
    epochs_run: int
    best_val_loss: float
    network: object = None


@dataclass(frozen=True)
class CvReport:
    n_classes: int
    n_locations: int
    folds: tuple
    avg_confusion_class: ConfusionMatrix
    avg_confusion_loc: ConfusionMatrix
    property_failures: tuple


@dataclass(frozen=True)
class IlluminationSpread:
    """Per-fold error rates; clustering shows up as high variance."""

    holdout_ids: tuple
    error_class: tuple
    error_loc: tuple
    variance_class: float
    variance_loc: float


@dataclass(frozen=True)
class JointVsSeparate:
    """Mean per-pixel accuracies of the three training regimes."""

    joint: tuple
    identity_only: tuple
    position_only: tuple
    tolerance: float
    per_fold: tuple

    @property
    def joint_ok_class(self) -> bool:
        return self.joint[0] >= self.identity_only[0] - self.tolerance

    @property
    def joint_ok_loc(self) -> bool:
        return self.joint[1] >= self.position_only[1] - self.tolerance


def predict(net: TwoHeadNetwork, features: np.ndarray):
    """One-based labels per head; exact ties resolve to the lowest label."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    class_idx, loc_idx = net.predict(features[None, :] if single else features)
    if single:
        return int(class_idx[0]) + 1, int(loc_idx[0]) + 1
    return class_idx + 1, loc_idx + 1


def confusion(preds, truths, n: int) -> ConfusionMatrix:
    """Count truth-vs-prediction pairs, then normalize each supported row."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ValueError("preds and truths must be equal-length 1-d label arrays")
    for name, labels in (("pred", preds), ("truth", truths)):
        if labels.size and (labels.min() < 1 or labels.max() > n):
            raise ValueError(f"{name} labels must lie in 1..{n}")
    counts = np.bincount((truths - 1) * n + (preds - 1),
                         minlength=n * n).reshape(n, n).astype(np.float64)
    sums = counts.sum(axis=1)
    supported = sums > 0
    counts[supported] /= sums[supported, None]
    unsupported = tuple(int(i) + 1 for i in np.flatnonzero(~supported))
    return ConfusionMatrix(counts, n, True, unsupported)


def average_matrices(matrices) -> ConfusionMatrix:
    """Element-wise mean; rows lacking support anywhere lose row-stochasticity."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("nothing to average")
    n = matrices[0].n
    for m in matrices:
        if m.n != n:
            raise ValueError(f"size mismatch: {m.n} != {n}")
        if not m.row_normalized:
            raise ValueError("can only average row-normalized matrices")
    mean = np.mean([m.entries for m in matrices], axis=0)
    unsupported = tuple(sorted({row for m in matrices for row in m.unsupported_rows}))
    return ConfusionMatrix(mean, n, True, unsupported)


def majority_vote(person_preds, position_preds):
    """Modal label per task over one measurement; ties go to the lowest label."""
    person_preds = np.asarray(person_preds, dtype=np.int64)
    position_preds = np.asarray(position_preds, dtype=np.int64)
    if person_preds.size == 0 or position_preds.size == 0:
        raise ValueError("majority vote over an empty prediction list")
    return (int(np.bincount(person_preds).argmax()),
            int(np.bincount(position_preds).argmax()))


def _fold_ids(ds: Dataset, holdouts=None):
    ids = np.unique(ds.illumination_ids)
    if ids.size < 2:
        raise ValueError(
            f"cross-validation needs at least 2 illuminations, found {ids.size}")
    all_ids = [int(i) for i in ids]
    if holdouts is None:
        return all_ids, True
    holdouts = [int(h) for h in holdouts]
    for h in holdouts:
        if h not in all_ids:
            raise ValueError(f"holdout illumination {h} not in dataset "
                             f"(has {all_ids})")
    return sorted(set(holdouts)), set(holdouts) == set(all_ids)


def _train_fold(ds, arch, cfg, holdout, heads="both"):
    train_ds, test_ds = loo_split(ds, holdout)
    fold_seed = derive_seed(cfg.seed, f"fold-{holdout}")
    fold_cfg = dataclasses.replace(cfg, seed=fold_seed, heads=heads)
    net = build_network(arch, ds.n_bins, ds.n_classes, ds.n_locations, fold_seed)
    net, stats = train(net, train_ds, fold_cfg)
    person_pred, position_pred = predict(net, test_ds.features)
    return test_ds, person_pred, position_pred, stats, net


def _fold_verdicts(test_ds, person_pred, position_pred):
    verdicts = []
    pairs = sorted({(int(p), int(x)) for p, x in
                    zip(test_ds.person_ids, test_ds.position_indices)})
    for person, position in pairs:
        rows = np.flatnonzero((test_ds.person_ids == person)
                              & (test_ds.position_indices == position))
        pv, xv = majority_vote(person_pred[rows], position_pred[rows])
        verdicts.append(MajorityVerdict(person, position, pv, xv, rows.size))
    return tuple(verdicts)


def run_cross_validation(ds: Dataset, arch: dict, cfg: TrainConfig,
                         holdouts=None) -> CvReport:
    """Hold out each illumination in turn; train, predict, score, and vote.

    Passing explicit holdout ids restricts the run to those folds; the
    partition check only applies when every illumination takes a turn.
    """
    holdouts, full_run = _fold_ids(ds, holdouts)
    folds = []
    failures = []
    total_test = 0
    for holdout in holdouts:
        test_ds, person_pred, position_pred, stats, net = _train_fold(
            ds, arch, cfg, holdout)
        if not np.all(test_ds.illumination_ids == holdout):
            failures.append(f"fold {holdout}: test set leaked other illuminations")
        total_test += len(test_ds)

        acc_class = float(np.mean(person_pred == test_ds.person_ids))
        acc_loc = float(np.mean(position_pred == test_ds.position_indices))
        verdicts = _fold_verdicts(test_ds, person_pred, position_pred)
        maj_class = float(np.mean([v.person_verdict == v.person_id
                                   for v in verdicts]))
        maj_loc = float(np.mean([v.position_verdict == v.position_index
                                 for v in verdicts]))
        if maj_class < acc_class:
            failures.append(f"fold {holdout}: majority identity accuracy "
                            f"{maj_class!r} < per-pixel {acc_class!r}")
        if maj_loc < acc_loc:
            failures.append(f"fold {holdout}: majority position accuracy "
                            f"{maj_loc!r} < per-pixel {acc_loc!r}")

        folds.append(FoldResult(
            holdout_id=holdout, n_test=len(test_ds), acc_class=acc_class,
            acc_loc=acc_loc,
            confusion_class=confusion(person_pred, test_ds.person_ids,
                                      ds.n_classes),
            confusion_loc=confusion(position_pred, test_ds.position_indices,
                                    ds.n_locations),
            verdicts=verdicts, majority_acc_class=maj_class,
            majority_acc_loc=maj_loc, epochs_run=len(stats),
            best_val_loss=min(s.val_loss for s in stats), network=net))
    if full_run and total_test != len(ds):
        failures.append(
            f"test folds cover {total_test} samples, dataset has {len(ds)}")

    return CvReport(
        n_classes=ds.n_classes, n_locations=ds.n_locations, folds=tuple(folds),
        avg_confusion_class=average_matrices([f.confusion_class for f in folds]),
        avg_confusion_loc=average_matrices([f.confusion_loc for f in folds]),
        property_failures=tuple(failures))


def compare_joint_vs_separate(ds: Dataset, arch: dict, cfg: TrainConfig,
                              tolerance: float = 0.02,
                              holdouts=None) -> JointVsSeparate:
    """Three trainings per fold from identical initial weights: both heads,
    identity head only, position head only."""
    holdouts, _ = _fold_ids(ds, holdouts)
    per_fold = []
    sums = {"joint": [0.0, 0.0], "class": [0.0, 0.0], "loc": [0.0, 0.0]}
    for holdout in holdouts:
        for heads in ("joint", "class", "loc"):
            test_ds, person_pred, position_pred, _, _ = _train_fold(
                ds, arch, cfg, holdout, heads="both" if heads == "joint" else heads)
            acc_class = float(np.mean(person_pred == test_ds.person_ids))
            acc_loc = float(np.mean(position_pred == test_ds.position_indices))
            sums[heads][0] += acc_class
            sums[heads][1] += acc_loc
            per_fold.append((holdout, heads, acc_class, acc_loc))
    n = len(holdouts)
    return JointVsSeparate(
        joint=(sums["joint"][0] / n, sums["joint"][1] / n),
        identity_only=(sums["class"][0] / n, sums["class"][1] / n),
        position_only=(sums["loc"][0] / n, sums["loc"][1] / n),
        tolerance=tolerance, per_fold=tuple(per_fold))


def within_vs_across_illumination_errors(report: CvReport) -> IlluminationSpread:
    """Do mistakes concentrate in particular holdout illuminations?"""
    err_class = tuple(1.0 - f.acc_class for f in report.folds)
    err_loc = tuple(1.0 - f.acc_loc for f in report.folds)
    return IlluminationSpread(
        holdout_ids=tuple(f.holdout_id for f in report.folds),
        error_class=err_class, error_loc=err_loc,
        variance_class=float(np.var(err_class)),
        variance_loc=float(np.var(err_loc)))


def _position_label(index: int, n_locations: int) -> str:
    if n_locations == len(POSITION_NAMES):
        return POSITION_NAMES[index - 1]
    return str(index)


def _format_matrix(matrix: ConfusionMatrix, labels) -> str:
    width = max(6, max(len(str(l)) for l in labels) + 1)
    head = " " * width + "".join(f"{str(l):>{width}}" for l in labels)
    lines = [head]
    for i, row in enumerate(matrix.entries):
        cells = "".join(f"{v:>{width}.3f}" for v in row)
        mark = "  (no support)" if (i + 1) in matrix.unsupported_rows else ""
        lines.append(f"{str(labels[i]):>{width}}{cells}{mark}")
    return "\n".join(lines)


def render_text_summary(report: CvReport, jvs: JointVsSeparate = None,
                        spread: IlluminationSpread = None) -> str:
    """Human-readable digest of a full cross-validation run."""
    out = [f"leave-one-illumination-out cross-validation "
           f"({len(report.folds)} folds)"]
    for f in report.folds:
        out.append(
            f"fold {f.holdout_id}: per-pixel identity {f.acc_class:.4f} "
            f"position {f.acc_loc:.4f} | majority identity "
            f"{f.majority_acc_class:.4f} position {f.majority_acc_loc:.4f} "
            f"| {f.n_test} pixels, {f.epochs_run} epochs")
    out.append(f"mean per-pixel: identity "
               f"{np.mean([f.acc_class for f in report.folds]):.4f} position "
               f"{np.mean([f.acc_loc for f in report.folds]):.4f}")
    class_labels = [str(i) for i in range(1, report.n_classes + 1)]
    loc_labels = [_position_label(i, report.n_locations)
                  for i in range(1, report.n_locations + 1)]
    out.append("")
    out.append("averaged identity confusion (rows = truth):")
    out.append(_format_matrix(report.avg_confusion_class, class_labels))
    out.append("")
    out.append("averaged position confusion (rows = truth):")
    out.append(_format_matrix(report.avg_confusion_loc, loc_labels))
    if spread is not None:
        out.append("")
        out.append("error rate by holdout illumination:")
        for h, ec, el in zip(spread.holdout_ids, spread.error_class,
                             spread.error_loc):
            out.append(f"  illumination {h}: identity {ec:.4f} position {el:.4f}")
        out.append(f"  variance: identity {spread.variance_class:.6f} "
                   f"position {spread.variance_loc:.6f}")
    if jvs is not None:
        out.append("")
        out.append("joint vs separate heads (mean per-pixel accuracy):")
        out.append(f"  {'regime':<15}{'identity':>10}{'position':>10}")
        out.append(f"  {'joint':<15}{jvs.joint[0]:>10.4f}{jvs.joint[1]:>10.4f}")
        out.append(f"  {'identity-only':<15}{jvs.identity_only[0]:>10.4f}"
                   f"{jvs.identity_only[1]:>10.4f}")
        out.append(f"  {'position-only':<15}{jvs.position_only[0]:>10.4f}"
                   f"{jvs.position_only[1]:>10.4f}")
        verdict = ("holds" if jvs.joint_ok_class and jvs.joint_ok_loc
                   else "VIOLATED")
        out.append(f"  joint >= separate - {jvs.tolerance}: {verdict}")
    if report.property_failures:
        out.append("")
        out.append("PROPERTY FAILURES:")
        for failure in report.property_failures:
            out.append(f"  {failure}")
    else:
        out.append("")
        out.append("embedded properties: all satisfied")
    return "\n".join(out) + "\n"


def confusion_csv(matrix: ConfusionMatrix, labels) -> str:
    """Row-major CSV with the truth label leading each row."""
    lines = ["truth," + ",".join(str(l) for l in labels)]
    for label, row in zip(labels, matrix.entries):
        lines.append(f"{label}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _matrix_json(matrix: ConfusionMatrix):
    return {"entries": [[float(v) for v in row] for row in matrix.entries],
            "unsupported_rows": list(matrix.unsupported_rows)}


def report_to_json(report: CvReport, jvs: JointVsSeparate = None,
                   spread: IlluminationSpread = None) -> str:
    """Machine-readable report; identical runs serialize to identical bytes."""
    payload = {
        "n_classes": report.n_classes,
        "n_locations": report.n_locations,
        "folds": [{
            "holdout_id": f.holdout_id,
            "n_test": f.n_test,
            "per_pixel_accuracy": {"identity": f.acc_class, "position": f.acc_loc},
            "majority_accuracy": {"identity": f.majority_acc_class,
                                  "position": f.majority_acc_loc},
            "epochs_run": f.epochs_run,
            "best_val_loss": f.best_val_loss,
            "confusion_identity": _matrix_json(f.confusion_class),
            "confusion_position": _matrix_json(f.confusion_loc),
            "majority_verdicts": [{
                "person_id": v.person_id, "position_index": v.position_index,
                "person_verdict": v.person_verdict,
                "position_verdict": v.position_verdict,
                "n_pixels": v.n_pixels} for v in f.verdicts],
        } for f in report.folds],
        "averaged_confusion_identity": _matrix_json(report.avg_confusion_class),
        "averaged_confusion_position": _matrix_json(report.avg_confusion_loc),
        "property_failures": list(report.property_failures),
    }
    if spread is not None:
        payload["illumination_error_spread"] = {
            "holdout_ids": list(spread.holdout_ids),
            "error_identity": list(spread.error_class),
            "error_position": list(spread.error_loc),
            "variance_identity": spread.variance_class,
            "variance_position": spread.variance_loc,
        }
    if jvs is not None:
        payload["joint_vs_separate"] = {
            "joint": {"identity": jvs.joint[0], "position": jvs.joint[1]},
            "identity_only": {"identity": jvs.identity_only[0],
                              "position": jvs.identity_only[1]},
            "position_only": {"identity": jvs.position_only[0],
                              "position": jvs.position_only[1]},
            "tolerance": jvs.tolerance,
            "joint_ok_identity": jvs.joint_ok_class,
            "joint_ok_position": jvs.joint_ok_loc,
            "per_fold": [{"holdout_id": h, "regime": m, "identity": a,
                          "position": b} for h, m, a, b in jvs.per_fold],
        }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report_files(report: CvReport, out_dir, jvs: JointVsSeparate = None,
                       spread: IlluminationSpread = None) -> list:
    """Emit summary text, per-matrix CSVs, and the JSON report; returns paths."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    class_labels = [str(i) for i in range(1, report.n_classes + 1)]
    loc_labels = [_position_label(i, report.n_locations)
                  for i in range(1, report.n_locations + 1)]
    written = []

    def emit(name, text):
        path = out_dir / name
        path.write_text(text)
        written.append(path)

    emit("summary.txt", render_text_summary(report, jvs, spread))
    emit("report.json", report_to_json(report, jvs, spread))
    for f in report.folds:
        emit(f"confusion_identity_fold{f.holdout_id}.csv",
             confusion_csv(f.confusion_class, class_labels))
        emit(f"confusion_position_fold{f.holdout_id}.csv",
             confusion_csv(f.confusion_loc, loc_labels))
    emit("confusion_identity_avg.csv",
         confusion_csv(report.avg_confusion_class, class_labels))
    emit("confusion_position_avg.csv",
         confusion_csv(report.avg_confusion_loc, loc_labels))
    return written
