import numpy as np
import pytest

from tdcm import (
    CausalCurve,
    DataError,
    Dataset,
    FeatureId,
    SplitSpec,
    TimeSeries,
    build_threshold_candidates,
    monotonicity_check,
    optimize_threshold,
    select_features_for_threshold,
)


def curve(values, cause="A", start=0):
    values = np.asarray(values, dtype=np.float64)
    return CausalCurve(
        cause, "X", np.arange(start, start + values.size), values, E=2, tau=1, L=100
    )


def step_curve(high, lo_lag, hi_lag, length=15, low=0.05, cause="A"):
    vals = np.full(length, low)
    vals[lo_lag : hi_lag + 1] = high
    return curve(vals, cause=cause)


class TestThresholdCandidates:
    def test_grid_plus_variable_maxima(self):
        curves = {
            "A": curve([0.2, 0.8, 0.3], cause="A"),
            "B": curve([0.3, 0.5, 0.2], cause="B"),
        }
        cands = build_threshold_candidates(curves, 4)
        assert np.allclose(cands, [0.2, 0.4, 0.5, 0.6, 0.8])

    def test_constant_curve_collapses(self):
        cands = build_threshold_candidates({"A": curve([0.4, 0.4, 0.4])}, 5)
        assert np.allclose(cands, [0.4])

    def test_global_max_always_present(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            curves = {
                f"V{j}": curve(rng.uniform(0, 1, 12), cause=f"V{j}")
                for j in range(int(rng.integers(1, 5)))
            }
            cands = build_threshold_candidates(curves, int(rng.integers(2, 9)))
            top = max(float(np.nanmax(c.strengths)) for c in curves.values())
            assert top in cands

    def test_rejects_degenerate_input(self):
        with pytest.raises(DataError):
            build_threshold_candidates({"A": curve([0.1, 0.2])}, 1)
        all_nan = curve([np.nan, np.nan, np.nan])
        with pytest.raises(DataError, match="no finite"):
            build_threshold_candidates({"A": all_nan}, 4)

    def test_negative_window_ignored(self):
        c = curve([0.99, 0.9, 0.1, 0.5, 0.2], start=-2)
        cands = build_threshold_candidates({"A": c}, 3)
        assert cands.max() == 0.5


class TestSelectFeatures:
    def test_plateau_window(self):
        curves = {"A": step_curve(0.9, 3, 10)}
        feats = select_features_for_threshold(curves, {"A": 3}, 0.5, 14)
        assert [f.lag for f in feats] == list(range(3, 11))

    def test_threshold_above_curve_empty(self):
        curves = {"A": step_curve(0.9, 3, 10)}
        assert select_features_for_threshold(curves, {"A": 3}, 0.95, 14) == ()

    def test_stops_at_first_dip(self):
        vals = [0.0, 0.9, 0.9, 0.3, 0.9, 0.9]
        feats = select_features_for_threshold({"A": curve(vals)}, {"A": 1}, 0.5, 5)
        assert [f.lag for f in feats] == [1, 2]

    def test_window_clipped_to_max_delay(self):
        curves = {"A": step_curve(0.9, 3, 14, length=15)}
        feats = select_features_for_threshold(curves, {"A": 3}, 0.5, 8)
        assert [f.lag for f in feats] == list(range(3, 9))

    def test_lag_zero_never_selected(self):
        vals = [0.9, 0.9, 0.9, 0.1]
        feats = select_features_for_threshold({"A": curve(vals)}, {"A": 0}, 0.5, 3)
        assert [f.lag for f in feats] == [1, 2]

    def test_pre_delay_extension_prepends(self):
        curves = {"A": step_curve(0.9, 5, 8)}
        feats = select_features_for_threshold(curves, {"A": 5}, 0.5, 14, 3)
        assert [f.lag for f in feats] == [2, 3, 4, 5, 6, 7, 8]

    def test_extension_clamped_at_lag_one(self):
        curves = {"A": step_curve(0.9, 2, 4)}
        feats = select_features_for_threshold(curves, {"A": 2}, 0.5, 14, 5)
        assert [f.lag for f in feats] == [1, 2, 3, 4]

    def test_extension_skipped_for_empty_window(self):
        curves = {"A": step_curve(0.9, 5, 8)}
        assert (
            select_features_for_threshold(curves, {"A": 5}, 0.95, 14, 3) == ()
        )

    def test_unresolved_variable_contributes_nothing(self):
        curves = {"A": step_curve(0.9, 2, 6), "B": step_curve(0.9, 1, 6, cause="B")}
        feats = select_features_for_threshold(curves, {"A": 2}, 0.5, 14)
        assert {f.variable for f in feats} == {"A"}


class TestNestedness:
    def test_subset_holds_on_fixture(self):
        curves = {"A": step_curve(0.9, 2, 9), "B": step_curve(0.6, 1, 5, cause="B")}
        delays = {"A": 2, "B": 1}
        f_low, f_high = monotonicity_check(curves, delays, 0.3, 0.6, 14)
        assert set(f_high) <= set(f_low)

    def test_equal_thresholds_equal_sets(self):
        curves = {"A": step_curve(0.9, 2, 9)}
        f_low, f_high = monotonicity_check(curves, {"A": 2}, 0.5, 0.5, 14)
        assert f_low == f_high

    def test_random_curves_property(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            curves = {}
            delays = {}
            for j in range(int(rng.integers(1, 4))):
                name = f"V{j}"
                curves[name] = curve(rng.uniform(0, 1, 20), cause=name)
                delays[name] = int(rng.integers(0, 10))
            lo, hi = np.sort(rng.uniform(0, 1, 2))
            ext = int(rng.integers(0, 4))
            monotonicity_check(curves, delays, float(lo), float(hi), 19, ext)

    def test_misordered_thresholds_rejected(self):
        with pytest.raises(DataError):
            monotonicity_check({"A": step_curve(0.9, 2, 4)}, {"A": 2}, 0.8, 0.2, 14)


def lagged_dataset(seed=0, L=400):
    """KPI is a clean linear readout of C at lags 2 and 3; J is noise."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=L)
    j = rng.normal(size=L)
    x = np.zeros(L)
    x[3:] = c[1:-2] + 0.5 * c[:-3] + 0.05 * rng.normal(size=L - 3)
    return Dataset(
        [TimeSeries("C", c), TimeSeries("J", j), TimeSeries("X", x)], "X"
    )


class TestOptimizeThreshold:
    def _curves(self):
        return {
            "C": step_curve(0.9, 2, 3, cause="C"),
            "J": step_curve(0.4, 5, 9, cause="J"),
        }

    def test_true_lag_candidate_wins(self):
        ds = lagged_dataset()
        result = optimize_threshold(
            ds,
            self._curves(),
            {"C": 2, "J": 5},
            np.array([0.3, 0.6]),
            SplitSpec(300, 390),
            10,
        )
        scores = dict(result.scores)
        assert scores[0.6] < scores[0.3]
        assert result.c_best == 0.6
        assert {f.variable for f in result.features} == {"C"}

    def test_tie_breaks_toward_larger_threshold(self):
        ds = lagged_dataset(seed=1)
        curves = {"C": step_curve(0.9, 2, 3, cause="C")}
        result = optimize_threshold(
            ds, curves, {"C": 2}, np.array([0.2, 0.5]), SplitSpec(300, 390), 10
        )
        scores = dict(result.scores)
        assert scores[0.2] == scores[0.5]
        assert result.c_best == 0.5

    def test_empty_candidate_never_selected(self):
        ds = lagged_dataset(seed=2)
        result = optimize_threshold(
            ds,
            self._curves(),
            {"C": 2, "J": 5},
            np.array([0.6, 0.95]),
            SplitSpec(300, 390),
            10,
        )
        scores = dict(result.scores)
        assert scores[0.95] == float("inf")
        assert result.c_best == 0.6

    def test_all_candidates_empty_errors(self):
        ds = lagged_dataset(seed=3)
        with pytest.raises(DataError, match="empty feature set"):
            optimize_threshold(
                ds,
                self._curves(),
                {"C": 2, "J": 5},
                np.array([0.95]),
                SplitSpec(300, 390),
                10,
            )

    def test_deterministic_rerun(self):
        ds = lagged_dataset(seed=4)
        args = (
            ds,
            self._curves(),
            {"C": 2, "J": 5},
            np.array([0.3, 0.6]),
            SplitSpec(300, 390),
            10,
        )
        a = optimize_threshold(*args)
        b = optimize_threshold(*args)
        assert a.c_best == b.c_best
        assert a.scores == b.scores
        assert a.features == b.features

    def test_result_serializes(self):
        ds = lagged_dataset(seed=5)
        result = optimize_threshold(
            ds,
            self._curves(),
            {"C": 2, "J": 5},
            np.array([0.3, 0.6]),
            SplitSpec(300, 390),
            10,
            mode="tdccm",
        )
        payload = result.to_dict()
        assert payload["mode"] == "tdccm"
        assert payload["c_best"] == result.c_best
        assert all({"variable", "lag"} == set(f) for f in payload["features"])
