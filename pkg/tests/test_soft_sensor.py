import numpy as np
import pytest
from scipy import stats

from tdcm import (
    DataError,
    Metrics,
    PlsModel,
    metrics_eval,
    pls_fit,
    pls_predict,
    stability_sweep,
    wilcoxon_signed_rank,
)


def ols_predictions(X, y):
    M = np.column_stack([np.ones(len(y)), X])
    return M @ np.linalg.lstsq(M, y, rcond=None)[0]


def wilcoxon_enumeration_p(diffs):
    """Exhaustive two-sided tail over all 2^n sign assignments."""
    nz = diffs[diffs != 0.0]
    ranks = stats.rankdata(np.abs(nz))
    r_plus = ranks[nz > 0].sum()
    r_minus = ranks[nz < 0].sum()
    w_low = min(r_plus, r_minus)
    total = ranks.sum()
    n = nz.size
    count = 0
    for mask in range(2**n):
        w = sum(r for i, r in enumerate(ranks) if mask >> i & 1)
        if w <= w_low or w >= total - w_low:
            count += 1
    return min(1.0, count / 2**n)


class TestPlsFit:
    def test_exact_linear_recovers_perfectly(self):
        x = np.linspace(0.0, 1.0, 60)
        y = 2.0 * x + 1.0
        model = pls_fit(x[:, None], y, 1)
        pred = pls_predict(model, x[:, None])
        assert np.abs(pred - y).max() < 1e-10
        assert metrics_eval(y, pred).r2 == pytest.approx(1.0, abs=1e-10)

    def test_full_components_match_ols(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n, p = 150, int(rng.integers(2, 7))
            X = rng.normal(size=(n, p))
            y = X @ rng.normal(size=p) + 0.2 * rng.normal(size=n)
            model = pls_fit(X, y, p)
            assert np.abs(pls_predict(model, X) - ols_predictions(X, y)).max() < 1e-6

    def test_constant_target_rejected(self):
        with pytest.raises(DataError, match="constant target"):
            pls_fit(np.random.default_rng(1).normal(size=(20, 2)), np.ones(20), 1)

    def test_component_cap_warns(self, caplog):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 2))
        y = X @ np.array([1.0, -1.0]) + 0.1 * rng.normal(size=30)
        with caplog.at_level("WARNING"):
            model = pls_fit(X, y, 5)
        assert model.achieved_components <= 2
        assert any("attainable" in r.message for r in caplog.records)

    def test_zero_variance_column_tolerated(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=80)
        X = np.column_stack([x, np.full(80, 7.0)])
        y = 3.0 * x + 0.01 * rng.normal(size=80)
        model = pls_fit(X, y, 1)
        assert model.coef[1] == 0.0

    def test_too_few_samples_rejected(self):
        with pytest.raises(DataError, match="samples"):
            pls_fit(np.ones((3, 2)), np.array([1.0, 2.0, 3.0]), 3)


class TestPlsPredict:
    def _model(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 3))
        y = X @ np.array([1.0, 0.5, -2.0]) + 0.1 * rng.normal(size=50)
        return pls_fit(X, y, 2), X

    def test_single_row(self):
        model, X = self._model()
        out = pls_predict(model, X[0])
        assert out.shape == (1,)

    def test_dimension_mismatch(self):
        model, _ = self._model()
        with pytest.raises(DataError, match="columns"):
            pls_predict(model, np.ones((5, 4)))

    def test_json_round_trip(self):
        model, X = self._model()
        clone = PlsModel.from_dict(model.to_dict())
        assert np.array_equal(pls_predict(clone, X), pls_predict(model, X))


class TestMetrics:
    def test_perfect_prediction(self):
        y = np.array([1.0, 2.0, 3.0])
        m = metrics_eval(y, y)
        assert (m.r2, m.rmse, m.mae) == (1.0, 0.0, 0.0)

    def test_hand_fixture(self):
        m = metrics_eval(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 4.0]))
        assert m.rmse == pytest.approx(np.sqrt(1 / 3))
        assert m.mae == pytest.approx(1 / 3)
        assert m.r2 == pytest.approx(0.5)

    def test_mean_predictor_scores_zero(self):
        y = np.array([1.0, 2.0, 3.0, 6.0])
        m = metrics_eval(y, np.full(4, y.mean()))
        assert m.r2 == pytest.approx(0.0)

    def test_constant_truth_r2_undefined(self):
        m = metrics_eval(np.ones(5), np.arange(5.0))
        assert np.isnan(m.r2)
        assert m.rmse > 0

    def test_length_checks(self):
        with pytest.raises(DataError):
            metrics_eval(np.ones(3), np.ones(4))
        with pytest.raises(DataError):
            metrics_eval(np.ones(1), np.ones(1))


class TestStabilitySweep:
    def test_structural_contract(self):
        calls = []

        def evaluate(size):
            calls.append(size)
            return Metrics(r2=size / 100.0, rmse=1.0 / size, mae=0.5 / size)

        sweep = stability_sweep([10, 20, 30], evaluate)
        assert calls == [10, 20, 30]
        assert sweep.sizes == (10, 20, 30)
        assert len(sweep.metrics) == 3
        assert sweep.summary["rmse"]["min"] == pytest.approx(1.0 / 30)
        assert sweep.summary["r2"]["max"] == pytest.approx(0.3)
        for stats_ in sweep.summary.values():
            assert set(stats_) == {"mean", "std", "min", "max"}

    def test_sizes_must_increase(self):
        with pytest.raises(DataError):
            stability_sweep([10, 10], lambda s: Metrics(0, 0, 0))
        with pytest.raises(DataError):
            stability_sweep([], lambda s: Metrics(0, 0, 0))


class TestWilcoxon:
    def test_identical_samples_rejected(self):
        a = np.arange(8.0)
        with pytest.raises(DataError, match="zero"):
            wilcoxon_signed_rank(a, a)

    def test_too_few_nonzero_rejected(self):
        a = np.array([1.0, 1, 1, 1, 1, 2])
        b = np.array([1.0, 1, 1, 1, 1, 5])
        with pytest.raises(DataError, match="at least 5"):
            wilcoxon_signed_rank(a, b)

    def test_hand_fixture_matches_enumeration(self):
        a = np.array([7.0, 6, 8, 5, 7, 6])
        b = np.array([9.0, 7, 8.5, 6, 10, 8])
        res = wilcoxon_signed_rank(a, b)
        assert res.method == "exact"
        assert res.p_value == wilcoxon_enumeration_p(a - b)

    def test_rank_sum_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(5, 30))
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            res = wilcoxon_signed_rank(a, b)
            assert res.r_plus + res.r_minus == pytest.approx(n * (n + 1) / 2)

    def test_median_delta(self):
        a = np.array([2.0, 4, 6, 8, 10, 12])
        b = np.array([1.0, 2, 3, 4, 5, 6])
        res = wilcoxon_signed_rank(a, b)
        assert res.median_delta == np.median(a - b)

    def test_exact_vs_refined_normal_agree_near_cutoff(self):
        from tdcm.soft_sensor import _exact_two_sided_p

        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(100):
            a = rng.normal(size=13)
            b = rng.normal(size=13)
            res = wilcoxon_signed_rank(a, b)
            assert res.method == "normal"
            d = a - b
            nz = d[d != 0]
            ranks = stats.rankdata(np.abs(nz))
            w_low = min(res.r_plus, res.r_minus)
            exact = _exact_two_sided_p(
                np.rint(2 * ranks).astype(np.int64), int(round(2 * w_low))
            )
            worst = max(worst, abs(res.p_value - exact))
        assert worst <= 0.01

    def test_normal_path_sane(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=40)
        b = a + rng.normal(size=40) * 0.1 + 0.2
        res = wilcoxon_signed_rank(a, b)
        assert res.method == "normal"
        assert 0.0 <= res.p_value <= 1.0
        assert res.p_value < 0.01
