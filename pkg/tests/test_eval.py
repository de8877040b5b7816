"""Evaluation harness tests: confusion arithmetic, tie rules, fold
partitioning, majority votes, and the report emitters."""

import json

import numpy as np
import pytest

from nlosid.ann.network import build_network, reduced_architecture
from nlosid.ann.train import TrainConfig
from nlosid.dataset import Dataset
from nlosid.eval import (ConfusionMatrix, CvReport, FoldResult,
                         JointVsSeparate, average_matrices,
                         compare_joint_vs_separate, confusion, confusion_csv,
                         majority_vote, predict, render_text_summary,
                         report_to_json, run_cross_validation,
                         within_vs_across_illumination_errors,
                         write_report_files)

N_BINS = 16


def probe_net(class_probs, loc_probs):
    """Net whose heads emit fixed probabilities regardless of input."""
    net = build_network(reduced_architecture(), N_BINS, len(class_probs),
                        len(loc_probs), seed=0)
    for head, probs in ((net.head_class, class_probs), (net.head_loc, loc_probs)):
        head.weights[...] = 0.0
        head.bias[...] = np.log(probs)
    return net


def cv_dataset(n_illum=5, px_per_group=2, seed=0, n_bins=N_BINS):
    """Every (person, position) pair separable by two indicator bins."""
    rng = np.random.default_rng(seed)
    rows, persons, positions, illums = [], [], [], []
    for ill in range(1, n_illum + 1):
        for person in (1, 2, 3):
            for pos in range(1, 8):
                for _ in range(px_per_group):
                    h = rng.uniform(0.0, 0.02, size=n_bins)
                    h[person - 1] += 1.0
                    h[3 + pos] += 1.0
                    rows.append(h)
                    persons.append(person)
                    positions.append(pos)
                    illums.append(ill)
    order = rng.permutation(len(rows))
    return Dataset(features=np.asarray(rows)[order],
                   person_ids=np.asarray(persons)[order],
                   position_indices=np.asarray(positions)[order],
                   illumination_ids=np.asarray(illums)[order],
                   pixel_ids=np.arange(len(rows), dtype=np.int64)[order],
                   n_bins=n_bins, n_classes=3, n_locations=7,
                   clothing_mode="different", scale=1.0)


class TestPredict:
    def test_argmax_labels(self):
        net = probe_net([0.1, 0.7, 0.2], [0.05, 0.05, 0.6, 0.1, 0.1, 0.05, 0.05])
        person, position = predict(net, np.zeros(N_BINS))
        assert (person, position) == (2, 3)

    def test_exact_tie_takes_lowest_label(self):
        net = probe_net([0.5, 0.5, 1e-9], np.full(7, 1.0 / 7.0))
        person, position = predict(net, np.ones(N_BINS))
        assert (person, position) == (1, 1)

    def test_uniform_heads_give_first_labels(self):
        net = probe_net(np.full(3, 1.0 / 3.0), np.full(7, 1.0 / 7.0))
        assert predict(net, np.zeros(N_BINS)) == (1, 1)

    def test_batch_mode_matches_single_mode(self):
        net = build_network(reduced_architecture(), N_BINS, 3, 7, seed=3)
        x = np.random.default_rng(4).uniform(size=(9, N_BINS))
        people, positions = predict(net, x)
        for i in range(9):
            p, q = predict(net, x[i])
            assert (p, q) == (people[i], positions[i])


class TestConfusion:
    def test_perfect_predictions_give_identity(self):
        labels = np.array([1, 2, 3, 1, 2, 3])
        mat = confusion(labels, labels, 3)
        np.testing.assert_array_equal(mat.entries, np.eye(3))
        assert mat.unsupported_rows == ()

    def test_hand_counted_example(self):
        mat = confusion(preds=[1, 2, 2], truths=[1, 1, 2], n=2)
        np.testing.assert_allclose(mat.entries, [[0.5, 0.5], [0.0, 1.0]])

    def test_collapsed_predictions_fill_first_column(self):
        mat = confusion(preds=[1, 1, 1, 1], truths=[1, 2, 2, 2], n=2)
        np.testing.assert_array_equal(mat.entries[:, 0], [1.0, 1.0])
        np.testing.assert_array_equal(mat.entries[:, 1], [0.0, 0.0])

    def test_zero_support_row_is_zero_and_flagged(self):
        mat = confusion(preds=[1, 1], truths=[1, 1], n=3)
        assert mat.unsupported_rows == (2, 3)
        np.testing.assert_array_equal(mat.entries[1], 0.0)
        np.testing.assert_array_equal(mat.entries[2], 0.0)

    def test_out_of_range_labels_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, 4], [1, 2], 3)
        with pytest.raises(ValueError):
            confusion([1, 1], [0, 2], 3)

    def test_supported_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        preds = rng.integers(1, 8, size=500)
        truths = rng.integers(1, 8, size=500)
        mat = confusion(preds, truths, 7)
        sums = mat.entries.sum(axis=1)
        for i, total in enumerate(sums):
            if (i + 1) not in mat.unsupported_rows:
                assert abs(total - 1.0) < 1e-9


class TestAverageMatrices:
    def test_average_with_itself_is_identity_operation(self):
        mat = confusion([1, 2, 2], [1, 1, 2], 2)
        avg = average_matrices([mat, mat])
        np.testing.assert_array_equal(avg.entries, mat.entries)

    def test_identity_averaged_with_uniform(self):
        n = 4
        identity = ConfusionMatrix(np.eye(n), n, True)
        uniform = ConfusionMatrix(np.full((n, n), 1.0 / n), n, True)
        avg = average_matrices([identity, uniform])
        want = np.full((n, n), (1.0 / n) / 2.0)
        np.fill_diagonal(want, (1.0 + 1.0 / n) / 2.0)
        np.testing.assert_allclose(avg.entries, want, atol=1e-15)

    def test_five_identities_average_to_identity(self):
        mats = [ConfusionMatrix(np.eye(3), 3, True) for _ in range(5)]
        np.testing.assert_array_equal(average_matrices(mats).entries, np.eye(3))

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError, match="size"):
            average_matrices([ConfusionMatrix(np.eye(3), 3, True),
                              ConfusionMatrix(np.eye(4), 4, True)])

    def test_unnormalized_input_rejected(self):
        raw = ConfusionMatrix(np.full((2, 2), 3.0), 2, False)
        with pytest.raises(ValueError, match="normalized"):
            average_matrices([raw])

    def test_partial_support_is_carried_into_flags(self):
        full = confusion([1, 2], [1, 2], 2)
        partial = confusion([1], [1], 2)
        avg = average_matrices([full, partial])
        assert avg.unsupported_rows == (2,)


class TestConfusionMatrixInvariants:
    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.array([[-0.1, 1.1], [0.0, 1.0]]), 2, True)

    def test_bad_row_sum_rejected(self):
        with pytest.raises(ValueError, match="sums to"):
            ConfusionMatrix(np.array([[0.6, 0.6], [0.0, 1.0]]), 2, True)

    def test_unnormalized_counts_are_fine(self):
        mat = ConfusionMatrix(np.array([[5.0, 1.0], [0.0, 9.0]]), 2, False)
        assert mat.entries[0, 0] == 5.0


class TestMajorityVote:
    def test_clear_majority(self):
        people = np.concatenate([np.full(500, 2), np.full(300, 1)])
        positions = np.full(800, 4)
        assert majority_vote(people, positions) == (2, 4)

    def test_tie_takes_lowest_label(self):
        people = np.concatenate([np.full(400, 1), np.full(400, 3)])
        positions = np.concatenate([np.full(400, 7), np.full(400, 2)])
        assert majority_vote(people, positions) == (1, 2)

    def test_single_prediction(self):
        assert majority_vote([3], [6]) == (3, 6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            majority_vote([], [])


def quick_cfg(seed=0, epochs=25, lr=3e-3):
    return TrainConfig(learning_rate=lr, epochs=epochs, batch_size=16,
                       seed=seed, patience=epochs)


@pytest.fixture(scope="module")
def report():
    return run_cross_validation(cv_dataset(), reduced_architecture(),
                                quick_cfg())


@pytest.fixture(scope="module")
def jvs_table():
    ds = cv_dataset(n_illum=2)
    return compare_joint_vs_separate(ds, reduced_architecture(),
                                     quick_cfg(epochs=80, lr=5e-3))


class TestRunCrossValidation:
    def test_one_fold_per_illumination(self, report):
        assert len(report.folds) == 5
        assert [f.holdout_id for f in report.folds] == [1, 2, 3, 4, 5]

    def test_averaged_matrix_shapes(self, report):
        assert report.avg_confusion_class.entries.shape == (3, 3)
        assert report.avg_confusion_loc.entries.shape == (7, 7)

    def test_separable_problem_is_solved_perfectly(self, report):
        for f in report.folds:
            assert f.acc_class == 1.0 and f.acc_loc == 1.0
            np.testing.assert_array_equal(f.confusion_class.entries, np.eye(3))
            np.testing.assert_array_equal(f.confusion_loc.entries, np.eye(7))
        np.testing.assert_array_equal(report.avg_confusion_class.entries,
                                      np.eye(3))

    def test_fold_sizes_partition_the_dataset(self, report):
        assert sum(f.n_test for f in report.folds) == len(cv_dataset())
        assert report.property_failures == ()

    def test_majority_verdicts_cover_each_measurement(self, report):
        for f in report.folds:
            assert len(f.verdicts) == 21
            assert f.majority_acc_class == 1.0
            assert f.majority_acc_loc == 1.0
            assert all(v.n_pixels == 2 for v in f.verdicts)

    def test_single_illumination_rejected(self):
        ds = cv_dataset(n_illum=1)
        with pytest.raises(ValueError, match="at least 2"):
            run_cross_validation(ds, reduced_architecture(), quick_cfg())


class TestCompareJointVsSeparate:
    def test_accuracies_lie_in_unit_interval(self, jvs_table):
        for pair in (jvs_table.joint, jvs_table.identity_only,
                     jvs_table.position_only):
            assert 0.0 <= pair[0] <= 1.0 and 0.0 <= pair[1] <= 1.0

    def test_three_regimes_per_fold(self, jvs_table):
        assert len(jvs_table.per_fold) == 6
        regimes = {m for _, m, _, _ in jvs_table.per_fold}
        assert regimes == {"joint", "class", "loc"}

    def test_rerun_is_identical(self, jvs_table):
        ds = cv_dataset(n_illum=2)
        again = compare_joint_vs_separate(ds, reduced_architecture(),
                                          quick_cfg(epochs=80, lr=5e-3))
        assert again == jvs_table

    def test_joint_matches_separate_on_separable_data(self, jvs_table):
        assert jvs_table.joint[0] >= jvs_table.identity_only[0] - jvs_table.tolerance
        assert jvs_table.joint[1] >= jvs_table.position_only[1] - jvs_table.tolerance
        assert jvs_table.joint_ok_class and jvs_table.joint_ok_loc

    def test_flag_arithmetic(self):
        jvs = JointVsSeparate(joint=(0.90, 0.95), identity_only=(0.93, 0.5),
                              position_only=(0.5, 0.96), tolerance=0.02,
                              per_fold=())
        assert not jvs.joint_ok_class
        assert jvs.joint_ok_loc


def tiny_fold(holdout, acc):
    eye3 = ConfusionMatrix(np.eye(3), 3, True)
    eye7 = ConfusionMatrix(np.eye(7), 7, True)
    return FoldResult(holdout_id=holdout, n_test=10, acc_class=acc, acc_loc=acc,
                      confusion_class=eye3, confusion_loc=eye7, verdicts=(),
                      majority_acc_class=1.0, majority_acc_loc=1.0,
                      epochs_run=1, best_val_loss=0.0)


def tiny_report(accs):
    folds = tuple(tiny_fold(i + 1, a) for i, a in enumerate(accs))
    eye3 = ConfusionMatrix(np.eye(3), 3, True)
    eye7 = ConfusionMatrix(np.eye(7), 7, True)
    return CvReport(n_classes=3, n_locations=7, folds=folds,
                    avg_confusion_class=eye3, avg_confusion_loc=eye7,
                    property_failures=())


class TestIlluminationSpread:
    def test_perfect_classifier_has_zero_variance(self):
        spread = within_vs_across_illumination_errors(tiny_report([1.0] * 5))
        assert spread.error_class == (0.0,) * 5
        assert spread.variance_class == 0.0

    def test_one_bad_fold_variance(self):
        spread = within_vs_across_illumination_errors(
            tiny_report([0.0, 1.0, 1.0, 1.0, 1.0]))
        assert spread.error_class == (1.0, 0.0, 0.0, 0.0, 0.0)
        assert spread.variance_class == pytest.approx(0.16, rel=1e-12)

    def test_row_count_equals_fold_count(self):
        spread = within_vs_across_illumination_errors(tiny_report([0.9, 0.8]))
        assert len(spread.holdout_ids) == 2
        assert len(spread.error_loc) == 2


class TestReportEmission:
    def test_text_summary_mentions_every_fold(self):
        report = tiny_report([0.5, 0.75, 1.0])
        text = render_text_summary(report)
        for fold in report.folds:
            assert f"fold {fold.holdout_id}:" in text
        assert "averaged identity confusion" in text
        assert "all satisfied" in text

    def test_confusion_csv_layout(self):
        mat = confusion([1, 2, 2], [1, 1, 2], 2)
        csv = confusion_csv(mat, ["1", "2"])
        lines = csv.strip().split("\n")
        assert lines[0] == "truth,1,2"
        assert lines[1] == "1,0.5,0.5"
        assert lines[2] == "2,0.0,1.0"

    def test_json_round_trips_and_is_deterministic(self):
        report = tiny_report([1.0, 0.9])
        a, b = report_to_json(report), report_to_json(report)
        assert a == b
        payload = json.loads(a)
        assert payload["n_classes"] == 3
        assert len(payload["folds"]) == 2
        assert payload["property_failures"] == []

    def test_write_report_files_produces_full_set(self, tmp_path):
        report = tiny_report([1.0, 1.0])
        paths = write_report_files(report, tmp_path)
        names = {p.name for p in paths}
        assert "summary.txt" in names
        assert "report.json" in names
        assert "confusion_identity_fold1.csv" in names
        assert "confusion_position_fold2.csv" in names
        assert "confusion_identity_avg.csv" in names
        assert "confusion_position_avg.csv" in names
        assert all(p.exists() for p in paths)

    def test_position_labels_use_scene_names(self):
        report = tiny_report([1.0])
        text = render_text_summary(report)
        assert "Db" in text and "Df" in text
