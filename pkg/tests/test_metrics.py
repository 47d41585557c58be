import json

import numpy as np
import pytest

from effecg import metrics as ME


class TestConfusionMatrix:
    def test_hand_count(self):
        cm = ME.confusion_matrix([0, 1, 1], [0, 1, 0], 2)
        assert cm.tolist() == [[1, 0], [1, 1]]

    def test_perfect_predictions_diagonal(self, rng):
        y = rng.integers(0, 4, size=50)
        cm = ME.confusion_matrix(y, y, 4)
        assert not (cm - np.diag(np.diag(cm))).any()
        assert cm.sum() == 50

    def test_empty_input_zero_matrix(self):
        assert ME.confusion_matrix([], [], 3).tolist() == [[0] * 3] * 3

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            ME.confusion_matrix([0, 5], [0, 1], 2)


class TestF1:
    def test_precision_one_recall_half(self):
        # class 0: tp=1, fp=0, fn=1 -> P=1, R=0.5 -> F1=2/3
        cm = np.array([[1, 1], [0, 2]])
        f1 = ME.f1_scores(cm)
        assert f1.per_class[0] == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_diagonal_all_ones(self):
        f1 = ME.f1_scores(np.diag([3, 5, 2]))
        assert f1.per_class.tolist() == [1.0, 1.0, 1.0]
        assert f1.macro == 1.0 and f1.micro == 1.0

    def test_zero_support_zero_predictions_is_zero(self):
        cm = np.array([[2, 0], [0, 0]])
        assert ME.f1_scores(cm).per_class[1] == 0.0

    def test_micro_equals_accuracy_single_label(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 6))
            cm = rng.integers(0, 9, size=(k, k))
            if cm.sum() == 0:
                continue
            acc = np.trace(cm) / cm.sum()
            assert ME.f1_scores(cm).micro == pytest.approx(acc, abs=1e-12)


class TestCinc:
    def test_all_ones(self):
        assert ME.cinc_score([1.0, 1.0, 1.0, 1.0]) == 1.0

    def test_mean(self):
        assert ME.cinc_score([0.8, 0.6]) == pytest.approx(0.7, abs=1e-12)

    def test_single_class(self):
        assert ME.cinc_score([0.42]) == pytest.approx(0.42)

    def test_subset_selection(self):
        assert ME.cinc_score([0.2, 0.8, 0.4], classes=[1, 2]) == pytest.approx(0.6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ME.cinc_score([0.5], classes=[])


class TestRocAuc:
    def test_fully_concordant(self):
        _, auc = ME.roc_auc([0.9, 0.8, 0.1, 0.7], [1, 1, 0, 0])
        assert auc == 1.0

    def test_fully_discordant(self):
        _, auc = ME.roc_auc([0.4, 0.6], [1, 0])
        assert auc == 0.0

    def test_tie_convention(self):
        _, auc = ME.roc_auc([0.5, 0.5], [1, 0])
        assert auc == 0.5

    def test_curve_endpoints_and_monotonicity(self, rng):
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        curve, _ = ME.roc_auc(scores, labels)
        assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
        assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0
        assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            ME.roc_auc([0.1, 0.2], [1, 1])

    def test_trapezoid_equals_rank_statistic(self):
        rng = np.random.default_rng(12)
        for trial in range(100):
            n = int(rng.integers(4, 60))
            scores = np.round(rng.normal(size=n), 1)  # ties likely
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            curve, auc = ME.roc_auc(scores, labels)
            assert ME.trapezoid_area(curve) == pytest.approx(auc, abs=1e-9)

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        c1, a1 = ME.roc_auc(scores, labels)
        c2, a2 = ME.roc_auc(np.exp(scores) + 5.0, labels)
        assert a1 == pytest.approx(a2, abs=1e-12)
        assert np.array_equal(c1.fpr, c2.fpr) and np.array_equal(c1.tpr, c2.tpr)


class TestMultilabel:
    def test_counts_by_hand(self):
        counts = ME.multilabel_counts([{0, 1}, {1}], [{0}, {0, 1}], 2)
        # class 0: tp=1 (rec0), fp=1 (rec1), fn=0, tn=0
        assert counts[0].tolist() == [1, 1, 0, 0]
        # class 1: tp=1 (rec1), fp=0, fn=1 (rec0), tn=0
        assert counts[1].tolist() == [1, 0, 1, 0]

    def test_perfect_prediction(self):
        truth = [{0}, {1}, {0, 1}]
        f1 = ME.multilabel_f1(ME.multilabel_counts(truth, truth, 2))
        assert f1.micro == 1.0 and f1.macro == 1.0

    def test_tune_thresholds_improves_or_matches_default(self, rng):
        scores = rng.uniform(size=(50, 2))
        truth = [set(np.flatnonzero(row > 0.6).tolist()) for row in scores]
        tuned = ME.tune_thresholds(scores, truth)
        def micro_at(thr):
            preds = [set(np.flatnonzero(row >= thr).tolist()) for row in scores]
            return ME.multilabel_f1(ME.multilabel_counts(truth, preds, 2)).micro
        assert micro_at(tuned) >= micro_at(np.array([0.5, 0.5])) - 1e-12


class TestReportSerialization:
    def test_eval_report_json_round_trip(self):
        report = ME.EvalReport(
            parameter_count=100, label_mode="single", confusion=[[1, 0], [0, 1]],
            per_class_f1=[1.0, 1.0], precision=[1.0, 1.0], recall=[1.0, 1.0],
            macro_f1=1.0, micro_f1=1.0, cinc=1.0, auc_per_class={"0": 1.0},
        )
        parsed = json.loads(report.to_json())
        assert parsed["parameter_count"] == 100
        assert parsed["auc_per_class"]["0"] == 1.0

    def test_roc_points_csv_header_and_rows(self, rng):
        scores = rng.normal(size=10)
        labels = np.array([0, 1] * 5)
        curve, _ = ME.roc_auc(scores, labels)
        text = ME.roc_points_csv({0: curve})
        lines = text.strip().splitlines()
        assert lines[0] == "class,threshold,fpr,tpr"
        assert all(line.startswith("0,") for line in lines[1:])
        assert len(lines) == 1 + len(curve.fpr)
