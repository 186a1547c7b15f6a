import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from upar_bench.data import LabelMatrix
from upar_bench.metrics import (
    ConfidenceMatrix,
    MetricReport,
    MetricsError,
    PredictionMatrix,
    aggregate_protocol,
    aggregate_split,
    binarize,
    format_mean_std,
    instance_f1_samples,
    instance_prf,
    mean_accuracy,
    report_from_predictions,
)
from oracles import oracle_instance_f1_samples, oracle_instance_prf, oracle_mean_accuracy


def as_label_matrix(rows):
    rows = np.asarray(rows, dtype=np.int8)
    n = rows.shape[0]
    return LabelMatrix(
        [f"i{k}" for k in range(n)], ["d"] * n, ["test"] * n, rows
    )


def all_true(n):
    return np.ones(n, dtype=bool)


def random_fixture(rng, n=None, a=None):
    n = n or int(rng.integers(1, 33))
    a = a or int(rng.integers(1, 9))
    gt = rng.integers(0, 2, size=(n, a))
    pred = rng.integers(0, 2, size=(n, a))
    return PredictionMatrix(pred), as_label_matrix(gt)


class TestBinarize:
    def test_boundary_is_positive(self):
        conf = ConfidenceMatrix(["a"], np.array([[0.5]]))
        assert binarize(conf, 0.5).values[0, 0] == 1

    def test_all_zero(self):
        conf = ConfidenceMatrix(["a", "b"], np.zeros((2, 3)))
        assert binarize(conf, 0.5).values.sum() == 0

    def test_split_around_threshold(self):
        conf = ConfidenceMatrix(["a"], np.array([[0.4, 0.6]]))
        assert binarize(conf, 0.5).values.tolist() == [[0, 1]]

    def test_bad_threshold(self):
        conf = ConfidenceMatrix(["a"], np.array([[0.4]]))
        with pytest.raises(ValueError):
            binarize(conf, 1.5)


class TestMeanAccuracy:
    def test_perfect(self):
        gt = as_label_matrix([[1, 0], [0, 1]])
        pred = PredictionMatrix(gt.labels.copy())
        ma, _ = mean_accuracy(pred, gt, all_true(2))
        assert ma == 1.0

    def test_all_positive_prediction(self):
        gt = as_label_matrix([[1], [0]])
        pred = PredictionMatrix(np.ones((2, 1)))
        ma, _ = mean_accuracy(pred, gt, all_true(1))
        assert ma == 0.5  # TPR 1, TNR 0

    def test_hand_computed(self):
        gt = as_label_matrix([[1], [1], [0], [0]])
        pred = PredictionMatrix(np.array([[1], [0], [0], [0]]))
        ma, details = mean_accuracy(pred, gt, all_true(1))
        assert ma == 0.75  # TPR 1/2, TNR 1
        assert details[0].tpr == 0.5
        assert details[0].tnr == 1.0

    def test_degenerate_columns_excluded(self):
        gt = as_label_matrix([[1, 1, 0], [1, 0, 0]])  # col0 all-positive, col2 all-negative
        pred = PredictionMatrix(gt.labels.copy())
        ma, details = mean_accuracy(pred, gt, all_true(3))
        assert ma == 1.0
        assert details[0].excluded_reason == "no_negative_test_samples"
        assert details[2].excluded_reason == "no_positive_test_samples"
        assert details[1].excluded_reason is None

    def test_mask_exclusion_recorded(self):
        gt = as_label_matrix([[1, 0], [0, 1]])
        pred = PredictionMatrix(gt.labels.copy())
        mask = np.array([True, False])
        _, details = mean_accuracy(pred, gt, mask)
        assert details[1].excluded_reason == "inactive_in_training"

    def test_all_excluded_is_error(self):
        gt = as_label_matrix([[1], [1]])
        pred = PredictionMatrix(gt.labels.copy())
        with pytest.raises(MetricsError):
            mean_accuracy(pred, gt, all_true(1))

    def test_polarity_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred, gt = random_fixture(rng)
            mask = all_true(gt.n_attributes)
            try:
                ma, _ = mean_accuracy(pred, gt, mask)
            except MetricsError:
                continue
            flipped_gt = as_label_matrix(1 - gt.labels)
            flipped_pred = PredictionMatrix(1 - pred.values)
            ma_flip, _ = mean_accuracy(flipped_pred, flipped_gt, mask)
            assert ma == pytest.approx(ma_flip, abs=1e-15)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        pred, gt = random_fixture(rng, n=16, a=6)
        mask = all_true(6)
        ma, _ = mean_accuracy(pred, gt, mask)
        row_perm = rng.permutation(16)
        col_perm = rng.permutation(6)
        gt2 = as_label_matrix(gt.labels[row_perm][:, col_perm])
        pred2 = PredictionMatrix(pred.values[row_perm][:, col_perm])
        ma2, _ = mean_accuracy(pred2, gt2, mask[col_perm])
        assert ma == pytest.approx(ma2, abs=1e-15)

    def test_random_predictor_approaches_half(self):
        rng = np.random.default_rng(42)
        n = 10_000
        gt = as_label_matrix(rng.integers(0, 2, size=(n, 4)))
        pred = PredictionMatrix(rng.integers(0, 2, size=(n, 4)))
        ma, _ = mean_accuracy(pred, gt, all_true(4))
        assert abs(ma - 0.5) < 0.02


class TestInstancePRF:
    def test_perfect(self):
        gt = as_label_matrix([[1, 0], [0, 1]])
        pred = PredictionMatrix(gt.labels.copy())
        assert instance_prf(pred, gt, all_true(2)) == (1.0, 1.0, 1.0)

    def test_half_overlap(self):
        # gt {a, b}, pred {b, c}
        gt = as_label_matrix([[1, 1, 0]])
        pred = PredictionMatrix(np.array([[0, 1, 1]]))
        p, r, f1 = instance_prf(pred, gt, all_true(3))
        assert p == 0.5 and r == 0.5 and f1 == 0.5

    def test_empty_prediction_convention(self):
        gt = as_label_matrix([[1, 0]])
        pred = PredictionMatrix(np.zeros((1, 2)))
        p, r, f1 = instance_prf(pred, gt, all_true(2))
        assert p == 0.0 and r == 0.0 and f1 == 0.0

    def test_both_empty_convention(self):
        gt = as_label_matrix([[0, 0]])
        pred = PredictionMatrix(np.zeros((1, 2)))
        p, r, f1 = instance_prf(pred, gt, all_true(2))
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_f1_zero_iff_pr_zero(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            pred, gt = random_fixture(rng)
            p, r, f1 = instance_prf(pred, gt, all_true(gt.n_attributes))
            assert 0.0 <= f1 <= 1.0
            assert (f1 == 0.0) == (p * r == 0.0)


def test_metrics_match_oracle_seeded():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(100):
        pred, gt = random_fixture(rng)
        a = gt.n_attributes
        mask = rng.random(a) < 0.8
        if not mask.any():
            mask[0] = True
        pred_list = pred.values.tolist()
        gt_list = gt.labels.tolist()
        mask_list = mask.tolist()
        p, r, f1 = instance_prf(pred, gt, mask)
        po, ro, f1o = oracle_instance_prf(pred_list, gt_list, mask_list)
        assert abs(p - po) < 1e-12 and abs(r - ro) < 1e-12 and abs(f1 - f1o) < 1e-12
        fs = instance_f1_samples(pred, gt, mask)
        assert abs(fs - oracle_instance_f1_samples(pred_list, gt_list, mask_list)) < 1e-12
        try:
            ma, _ = mean_accuracy(pred, gt, mask)
        except MetricsError:
            with pytest.raises(ValueError):
                oracle_mean_accuracy(pred_list, gt_list, mask_list)
            continue
        mao, _ = oracle_mean_accuracy(pred_list, gt_list, mask_list)
        assert abs(ma - mao) < 1e-12
        checked += 1
    assert checked >= 80


class TestReport:
    def test_report_invariants(self):
        rng = np.random.default_rng(9)
        pred, gt = random_fixture(rng, n=20, a=5)
        mask = all_true(5)
        rep = report_from_predictions(pred, gt, mask)
        included = [d.mean_acc for d in rep.per_attribute if d.excluded_reason is None]
        assert rep.mA == pytest.approx(sum(included) / len(included), abs=1e-15)
        p, r = rep.instance_precision, rep.instance_recall
        expect_f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        assert rep.instance_f1 == pytest.approx(expect_f1, abs=1e-15)
        assert rep.excluded_attributes == [
            d.name for d in rep.per_attribute if d.excluded_reason is not None
        ]

    def test_json_and_csv(self, tmp_path):
        rng = np.random.default_rng(10)
        pred, gt = random_fixture(rng, n=8, a=3)
        rep = report_from_predictions(pred, gt, all_true(3))
        d = rep.to_json_dict()
        assert set(d) >= {"mA", "instance_f1", "per_attribute", "excluded_attributes"}
        rows = rep.to_csv_rows()
        assert rows[0] == ["kind", "name", "field", "value"]
        rep.write_csv(tmp_path / "rep.csv")
        assert (tmp_path / "rep.csv").read_text().startswith("kind,name,field,value")


class TestAggregation:
    def make(self, **kw):
        base = dict(mA=0.5, instance_precision=0.5, instance_recall=0.5, instance_f1=0.5)
        base.update(kw)
        return MetricReport(**base)

    def test_single_identity(self):
        rep = self.make(mA=0.77)
        assert aggregate_split([rep]).mA == 0.77

    def test_mean(self):
        got = aggregate_split([self.make(mA=0.6), self.make(mA=0.8)])
        assert got.mA == pytest.approx(0.7, abs=1e-15)

    def test_map_mean(self):
        reports = [self.make(map=v) for v in (0.1, 0.2, 0.3)]
        assert aggregate_split(reports).map == pytest.approx(0.2, abs=1e-15)

    def test_optional_missing_stays_none(self):
        got = aggregate_split([self.make(map=0.5), self.make()])
        assert got.map is None

    def test_permutation_invariant(self):
        reports = [self.make(mA=v) for v in (0.2, 0.9, 0.4)]
        a = aggregate_split(reports)
        b = aggregate_split(list(reversed(reports)))
        assert a.mA == b.mA

    def test_empty_errors(self):
        with pytest.raises(MetricsError):
            aggregate_split([])
        with pytest.raises(MetricsError):
            aggregate_protocol([])

    def test_protocol_population_std(self):
        # values [2, 4] scaled into [0,1]: use mA 0.2 / 0.4
        means, stds = aggregate_protocol([self.make(mA=0.2), self.make(mA=0.4)])
        assert means["mA"] == pytest.approx(0.3, abs=1e-15)
        assert stds["mA"] == pytest.approx(0.1, abs=1e-15)

    def test_protocol_identical_splits(self):
        means, stds = aggregate_protocol([self.make(mA=0.5)] * 3)
        assert stds["mA"] == 0.0

    def test_protocol_four_values(self):
        vals = [0.655, 0.684, 0.681, 0.702]
        means, _ = aggregate_protocol([self.make(mA=v) for v in vals])
        assert means["mA"] == pytest.approx(0.6805, abs=1e-12)


def test_format_mean_std():
    assert format_mean_std(0.705, 0.019) == "70.5 ± 1.9"


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_ma_symmetry_property(data):
    n = data.draw(st.integers(2, 12))
    a = data.draw(st.integers(1, 5))
    gt_bits = data.draw(
        st.lists(st.lists(st.integers(0, 1), min_size=a, max_size=a), min_size=n, max_size=n)
    )
    pred_bits = data.draw(
        st.lists(st.lists(st.integers(0, 1), min_size=a, max_size=a), min_size=n, max_size=n)
    )
    gt = as_label_matrix(gt_bits)
    pred = PredictionMatrix(np.asarray(pred_bits, dtype=np.int8))
    mask = all_true(a)
    try:
        ma, _ = mean_accuracy(pred, gt, mask)
    except MetricsError:
        return
    flipped, _ = mean_accuracy(
        PredictionMatrix(1 - pred.values), as_label_matrix(1 - gt.labels), mask
    )
    assert ma == pytest.approx(flipped, abs=1e-15)
