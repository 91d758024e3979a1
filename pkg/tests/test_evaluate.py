import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegpd.errors import DataError
from eegpd.evaluate import (
    EvalReport,
    bootstrap_evaluate,
    ci95,
    confusion_metrics,
    report_to_csv,
    report_to_text,
    roc_auc,
)
from eegpd.models import train_model


def auc_pair_counting(y, s):
    """Brute-force Mann-Whitney oracle: wins + half ties over all pairs."""
    pos = [v for v, t in zip(s, y) if t == 1]
    neg = [v for v, t in zip(s, y) if t == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestConfusionMetrics:
    def test_worked_example(self):
        # TP=3, FN=1, TN=4, FP=2
        y_true = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0])
        y_pred = np.array([1, 1, 1, 0, 1, 1, 0, 0, 0, 0])
        m = confusion_metrics(y_true, y_pred)
        assert m.accuracy == pytest.approx(0.7)
        assert m.recall == pytest.approx(0.75)
        assert m.specificity == pytest.approx(2.0 / 3.0)
        assert m.precision == pytest.approx(0.6)
        assert m.f1 == pytest.approx(2.0 / 3.0)

    def test_perfect_predictions(self):
        y = np.array([1, 0, 1, 0])
        m = confusion_metrics(y, y)
        assert (m.accuracy, m.recall, m.specificity, m.precision, m.f1) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_undefined_markers(self):
        y_true = np.zeros(5, dtype=int)
        y_pred = np.zeros(5, dtype=int)
        m = confusion_metrics(y_true, y_pred)
        assert m.precision is None and m.recall is None and m.f1 is None
        assert m.accuracy == 1.0 and m.specificity == 1.0

    def test_label_swap_symmetry(self):
        rng = np.random.default_rng(0)
        y_true = rng.integers(0, 2, 30)
        y_pred = rng.integers(0, 2, 30)
        m = confusion_metrics(y_true, y_pred)
        m_swapped = confusion_metrics(1 - y_true, 1 - y_pred)
        assert m.recall == m_swapped.specificity
        assert m.specificity == m_swapped.recall

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        y_true = rng.integers(0, 2, 25)
        y_pred = rng.integers(0, 2, 25)
        perm = rng.permutation(25)
        assert confusion_metrics(y_true, y_pred) == confusion_metrics(y_true[perm], y_pred[perm])


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc(np.array([1, 1, 0, 0]), np.array([0.9, 0.8, 0.3, 0.2])) == 1.0

    def test_interleaved(self):
        assert roc_auc(np.array([1, 0, 1, 0]), np.array([0.9, 0.8, 0.3, 0.2])) == 0.75

    def test_all_ties(self):
        assert roc_auc(np.array([1, 0, 1, 0]), np.ones(4)) == 0.5

    def test_single_class_error(self):
        with pytest.raises(DataError, match="both classes"):
            roc_auc(np.ones(4, dtype=int), np.arange(4.0))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_matches_pair_counting_exactly(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        # discrete score pool forces ties
        s = rng.choice(np.linspace(0, 1, 7), size=n)
        assert roc_auc(y, s) == auc_pair_counting(y, s)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        y = np.array([0, 1] * 8)
        s = rng.normal(size=16)
        assert roc_auc(y, s) == roc_auc(y, np.exp(2.0 * s) + 5.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_negation_complement(self, seed):
        rng = np.random.default_rng(seed)
        y = np.array([0, 1] * 8)
        s = rng.permutation(16).astype(float)  # tie-free
        assert roc_auc(y, s) + roc_auc(y, -s) == pytest.approx(1.0, abs=1e-12)


class TestCi95:
    def test_zero_variance(self):
        assert ci95([1.0, 1.0, 1.0]) == (1.0, 1.0, 1.0)

    def test_two_point_example(self):
        mean, lo, hi = ci95([0.0, 1.0])
        assert mean == pytest.approx(0.5)
        assert lo == pytest.approx(-0.48, abs=1e-9)
        assert hi == pytest.approx(1.48, abs=1e-9)

    def test_degenerate_single_value(self):
        assert ci95([0.7]) == (0.7, 0.7, 0.7)

    def test_bounds_may_exceed_unit_interval(self):
        _, lo, hi = ci95([0.9, 1.0, 1.0, 0.2])
        assert hi > 1.0 or lo < 0.0 or (0.0 <= lo and hi <= 1.0)  # no clipping applied
        mean, lo2, hi2 = ci95([1.0, 1.0, 0.1])
        assert lo2 <= mean <= hi2


def fitted_model(seed=0, n=60, p=4, gap=3.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = np.zeros(n, dtype=int)
    y[: n // 2] = 1
    rng.shuffle(y)
    x[:, 0] += gap * y
    return train_model("logreg", {"C": 1.0}, x, y), x, y


class TestBootstrapEvaluate:
    def test_perfect_model_degenerate_cis(self):
        model, x, y = fitted_model(gap=8.0)
        centers = ["A"] * 30 + ["B"] * 30
        report = bootstrap_evaluate(model, x, y, centers, n_boot=30, seed=0)
        for name, entry in report.global_metrics.items():
            assert entry == (1.0, 1.0, 1.0), name

    def test_identity_resampler_matches_single_shot(self):
        model, x, y = fitted_model(seed=3, gap=1.0)
        centers = ["A"] * len(y)
        report = bootstrap_evaluate(model, x, y, centers, n_boot=1, seed=0,
                                    resampler=lambda rng, n: np.arange(n))
        from eegpd.evaluate import _metrics_for
        from eegpd.models import predict_scores
        scores, labels = predict_scores(model, x)
        single = _metrics_for(y, labels, scores)
        for name, value in single.as_dict().items():
            entry = report.global_metrics[name]
            if value is None:
                assert entry is None
            else:
                assert entry[0] == pytest.approx(value)
                assert entry[1] == entry[2] == pytest.approx(value)

    def test_null_scores_auc_near_half(self):
        # scores independent of labels: evaluate on fresh data the model never saw
        model, _, _ = fitted_model(seed=5, n=100, gap=0.0)
        rng = np.random.default_rng(13)
        x_test = rng.normal(size=(100, 4))
        y_test = np.array([0, 1] * 50)
        report = bootstrap_evaluate(model, x_test, y_test, ["A"] * 100, n_boot=100, seed=7)
        mean_auc = report.global_metrics["auc"][0]
        assert 0.4 <= mean_auc <= 0.6

    def test_deterministic_under_seed(self):
        model, x, y = fitted_model(seed=6)
        centers = ["A"] * 30 + ["B"] * 30
        r1 = bootstrap_evaluate(model, x, y, centers, n_boot=25, seed=3)
        r2 = bootstrap_evaluate(model, x, y, centers, n_boot=25, seed=3)
        assert r1.global_metrics == r2.global_metrics
        assert r1.per_center == r2.per_center

    def test_per_center_scopes_present(self):
        model, x, y = fitted_model(seed=8)
        centers = ["A"] * 20 + ["B"] * 20 + ["C"] * 20
        report = bootstrap_evaluate(model, x, y, centers, n_boot=10, seed=1)
        assert list(report.per_center) == ["A", "B", "C"]

    def test_empty_test_set(self):
        model, x, y = fitted_model()
        with pytest.raises(DataError, match="empty test"):
            bootstrap_evaluate(model, np.empty((0, x.shape[1])), np.empty(0, dtype=int), [], 10, 0)

    def test_doubling_iterations_stable_mean(self):
        model, x, y = fitted_model(seed=9, gap=1.2)
        centers = ["A"] * len(y)
        r1 = bootstrap_evaluate(model, x, y, centers, n_boot=100, seed=11)
        r2 = bootstrap_evaluate(model, x, y, centers, n_boot=200, seed=12)
        for name in ("accuracy", "auc"):
            m1, lo1, hi1 = r1.global_metrics[name]
            m2 = r2.global_metrics[name][0]
            se = (hi1 - lo1) / (2 * 1.96)
            assert abs(m2 - m1) < 3 * max(se, 1e-6)


class TestReports:
    def make_report(self):
        model, x, y = fitted_model(seed=10, gap=0.8)
        centers = ["A"] * 30 + ["B"] * 30
        return bootstrap_evaluate(model, x, y, centers, n_boot=20, seed=2)

    def test_text_layout(self):
        report = self.make_report()
        text = report_to_text(report)
        lines = text.splitlines()
        assert lines[0].split()[:2] == ["scope", "accuracy"]
        assert lines[1].startswith("global")
        assert lines[2].startswith("A") and lines[3].startswith("B")

    def test_csv_layout(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "report.csv"
        report_to_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[0:2] == ["scope", "accuracy_mean"]
        assert len(lines) == 4  # header + global + 2 centers

    def test_undefined_rendered_na(self, tmp_path):
        report = EvalReport(
            global_metrics={n: None for n in ("accuracy", "recall", "specificity", "precision", "f1", "auc")},
            per_center={},
            n_bootstrap=1,
            seed=0,
        )
        assert "n/a" in report_to_text(report)
        path = tmp_path / "r.csv"
        report_to_csv(report, path)
        assert "n/a" in path.read_text()
