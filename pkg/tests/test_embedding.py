import numpy as np
import pytest

from tdcm import (
    DataError,
    Dataset,
    EmbeddingConfig,
    TimeSeries,
    embed,
    fnn_profile,
    select_embedding_dim,
)


def logistic_map(r=3.8, L=2000, x0=0.3):
    x = np.empty(L)
    x[0] = x0
    for t in range(1, L):
        x[t] = r * x[t - 1] * (1.0 - x[t - 1])
    return x


def fnn_oracle(v, tau, E, r_tol=15.0, a_tol=2.0):
    """Straight full-matrix recount of the false-neighbor fraction at one E.

    Points are windows [v(l-tau), ..., v(l-E*tau)] whose one-step-ahead
    coordinate v(l) exists; nearest neighbors by full pairwise distances with
    argmin tie-breaking toward the earlier point.
    """
    L = v.size
    labels = np.arange(1 + E * tau, L + 1)
    window = np.column_stack([v[labels - 1 - (k + 1) * tau] for k in range(E)])
    ahead = v[labels - 1]
    d2 = ((window[:, None, :] - window[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = d2.argmin(axis=1)
    r_e = np.sqrt(d2[np.arange(labels.size), nn])
    delta = np.abs(ahead - ahead[nn])
    sigma = v.std()
    false = np.zeros(labels.size, dtype=bool)
    for i in range(labels.size):
        if r_e[i] > 0:
            if delta[i] / r_e[i] > r_tol:
                false[i] = True
        elif delta[i] > 0:
            false[i] = True
        if np.sqrt(r_e[i] ** 2 + delta[i] ** 2) / sigma > a_tol:
            false[i] = True
    return false.mean()


class TestEmbed:
    def test_tiny_series(self):
        m = embed(TimeSeries("v", [1.0, 2, 3, 4, 5, 6]), EmbeddingConfig(2, 1))
        assert m.count == 5
        assert m.labels[0] == 2
        assert np.array_equal(m.points[0], [2.0, 1.0])

    def test_paper_sized(self):
        v = np.arange(1596, dtype=float)
        m = embed(TimeSeries("v", v), EmbeddingConfig(4, 1))
        assert m.count == 1593
        assert m.t_min == 4

    def test_degenerate_dimension_one(self):
        v = np.array([3.0, 1.0, 4.0])
        m = embed(TimeSeries("v", v), EmbeddingConfig(1, 1))
        assert m.t_min == 1
        assert np.array_equal(m.points.ravel(), v)

    def test_count_formula_holds(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            L = int(rng.integers(10, 120))
            tau = int(rng.integers(1, 4))
            e_upper = (L - 1) // tau + 1
            E = int(rng.integers(1, min(e_upper, 6) + 1))
            v = rng.normal(size=L)
            m = embed(TimeSeries("v", v), EmbeddingConfig(E, tau))
            assert m.count == L - (E - 1) * tau

    def test_coordinates_bit_exact(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=80)
        m = embed(TimeSeries("v", v), EmbeddingConfig(3, 2))
        for i, label in enumerate(m.labels):
            for k in range(3):
                assert m.points[i, k] == v[label - 1 - 2 * k]

    def test_too_short_rejected(self):
        with pytest.raises(DataError, match="too short"):
            embed(TimeSeries("v", [1.0, 2.0]), EmbeddingConfig(3, 1))


class TestFnn:
    def test_logistic_map_fractions_match_oracle_exactly(self):
        v = logistic_map()
        prof = fnn_profile(TimeSeries("x", v), tau=1, e_max=4)
        for E in range(1, 5):
            assert prof.fractions[E - 1] == fnn_oracle(v, 1, E)

    def test_logistic_map_unfolds_by_dimension_three(self):
        # oracle-determined: the noiseless one-dimensional map already has
        # no false neighbors at E = 1
        v = logistic_map()
        oracle = [fnn_oracle(v, 1, E) for E in (1, 2, 3)]
        assert min(e for e, f in zip((1, 2, 3), oracle) if f < 0.05) == 1
        prof = fnn_profile(TimeSeries("x", v), tau=1, e_max=3)
        assert any(f < 0.05 for f in prof.fractions)
        assert prof.fractions[0] < 0.05

    def test_sine_unfolds_by_two(self):
        v = np.sin(np.arange(2000) * 0.3)
        prof = fnn_profile(TimeSeries("s", v), tau=1, e_max=4)
        assert prof.fractions[1] < 0.05

    def test_fractions_in_unit_interval(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=400)
        prof = fnn_profile(TimeSeries("n", v), tau=1, e_max=5)
        assert np.all(prof.fractions >= 0.0)
        assert np.all(prof.fractions <= 1.0)

    def test_noiseless_map_nonincreasing_beyond_true_dimension(self):
        v = logistic_map()
        oracle_e = 1
        prof = fnn_profile(TimeSeries("x", v), tau=1, e_max=oracle_e + 3)
        tail = prof.fractions[oracle_e - 1 :]
        assert np.all(np.diff(tail) <= 1e-12)

    def test_constant_series_rejected(self):
        with pytest.raises(DataError, match="constant"):
            fnn_profile(TimeSeries("c", np.ones(50)), tau=1, e_max=3)


class TestSelectEmbeddingDim:
    def test_single_variable_reduces_to_its_profile(self):
        v = logistic_map(L=800)
        ds = Dataset([TimeSeries("x", v)], "x")
        sel = select_embedding_dim(ds, tau=1, e_max=4)
        prof = fnn_profile(TimeSeries("x", v), tau=1, e_max=4)
        expected = 1 + int(np.flatnonzero(prof.fractions < 0.05)[0])
        assert sel.E == expected

    def test_constant_column_skipped_with_warning(self, caplog):
        v = logistic_map(L=500)
        ds = Dataset([TimeSeries("x", v), TimeSeries("c", np.ones(500))], "x")
        with caplog.at_level("WARNING"):
            sel = select_embedding_dim(ds, tau=1, e_max=4)
        assert "c" in sel.skipped_constant
        assert any("constant" in r.message for r in caplog.records)

    def test_no_qualifying_dimension_errors(self):
        rng = np.random.default_rng(3)
        ds = Dataset([TimeSeries("n", rng.normal(size=300))], "n")
        with pytest.raises(DataError, match="no embedding dimension"):
            select_embedding_dim(ds, tau=1, e_max=2, threshold=1e-9)

    def test_all_constant_errors(self):
        ds = Dataset([TimeSeries("c", np.ones(100))], "c")
        with pytest.raises(DataError):
            select_embedding_dim(ds, tau=1, e_max=3)
