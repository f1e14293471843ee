import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rcad.channel import ChannelParams, ModulationParams, derived_variances, operating_point
from rcad.numerics import gaussian_cdf, gaussian_cdf_inv
from rcad.reconciliation import (SATURATION_EPS, Codebook, Decision, ScoreSet, centering_factor,
                                 classify_outcome, decide, empirical_m, encode,
                                 generate_codebook, noncentralities, score, score_all,
                                 threshold, unmask)

from conftest import log_posterior


@pytest.fixture
def point():
    return operating_point(1e-3, 134.0)


class TestCodebook:
    def test_deterministic(self):
        a = generate_codebook(123, 16, 9).materialize()
        b = generate_codebook(123, 16, 9).materialize()
        np.testing.assert_array_equal(a, b)

    def test_seeds_differ(self):
        a = generate_codebook(1, 64, 45).materialize()
        b = generate_codebook(2, 64, 45).materialize()
        assert np.mean(a != b) > 0.99

    def test_entry_matches_rows(self):
        cb = generate_codebook(99, 8, 5)
        table = cb.materialize()
        assert cb.entry(3, 4) == table[3, 4]
        np.testing.assert_array_equal(cb.row(6), table[6])

    def test_range(self):
        t = generate_codebook(5, 512, 64).materialize()
        assert t.min() >= 0.0 and t.max() < 1.0

    def test_uniformity(self):
        t = generate_codebook(2024, 1000, 1000).materialize().ravel()
        counts, _ = np.histogram(t, bins=100, range=(0.0, 1.0))
        assert stats.chisquare(counts).pvalue > 0.001

    @pytest.mark.parametrize("q, n", [(1, 5), (4, 0)])
    def test_invalid_shape(self, q, n):
        with pytest.raises(ValueError):
            Codebook(0, q, n)

    def test_index_errors(self):
        cb = Codebook(0, 4, 3)
        with pytest.raises(IndexError):
            cb.entry(4, 0)
        with pytest.raises(IndexError):
            cb.rows([0, 9])

    def test_full_table_shape(self):
        cb = generate_codebook(7, 1024, 45)
        assert cb.materialize().shape == (1024, 45)


class TestEncode:
    def test_zero_mask(self, point):
        ch, mod = point
        sy = derived_variances(ch, mod).sigma_y
        y = np.array([-1.0, 0.2, 3.0])
        table = np.zeros((4, 3))
        msg = encode(y, Codebook(0, 4, 3), 2, sy, table=table)
        np.testing.assert_allclose(msg.c, gaussian_cdf(y, sy), rtol=1e-15)
        assert msg.u == 2

    def test_zero_y(self):
        table = np.full((2, 4), 0.25)
        msg = encode(np.zeros(4), Codebook(0, 2, 4), 1, 1.0, table=table)
        np.testing.assert_allclose(msg.c, 0.75)

    def test_roundtrip(self, point):
        ch, mod = point
        sy = derived_variances(ch, mod).sigma_y
        cb = generate_codebook(17, 32, 41)
        y = np.random.default_rng(0).normal(0.0, sy, 41)
        msg = encode(y, cb, 5, sy)
        assert np.all((msg.c >= 0) & (msg.c < 1))
        np.testing.assert_allclose(unmask(msg.c, cb.row(5), sy), y, rtol=1e-6, atol=1e-9)

    def test_bad_index(self):
        with pytest.raises(IndexError):
            encode(np.zeros(3), Codebook(0, 4, 3), 4, 1.0)


def brute_score(x, w_row, c, T, xi, s2):
    """Score from the defining formula with scipy's normal quantile."""
    s_yx = 0.5 + 0.5 * T * xi
    s_y = T * s2 + s_yx
    t = np.clip((c - w_row) % 1.0, SATURATION_EPS, 1 - SATURATION_EPS)
    yp = stats.norm.ppf(t, scale=math.sqrt(s_y))
    return float(np.sum((yp - x * math.sqrt(T) * s_y / (T * s2)) ** 2))


class TestScore:
    def test_perfect_match(self, point):
        ch, mod = point
        sy = derived_variances(ch, mod).sigma_y
        k = centering_factor(ch, mod)
        x = np.array([0.7])
        cb = Codebook(3, 2, 1)
        msg = encode(k * x, cb, 0, sy)
        assert score(x, cb, msg.c, 0, ch, mod) < 1e-18

    def test_zero_x_is_independent_of_t(self):
        cb = generate_codebook(4, 6, 8)
        c = np.random.default_rng(5).uniform(size=8)
        s_ref = None
        for T in (1e-3, 0.1, 0.9):
            ch, mod = ChannelParams(T, 0.0), ModulationParams(1.0 / T)
            # sigma_Y fixed at 1.5 across the three channels
            s = score(np.zeros(8), cb, c, 2, ch, mod)
            s_ref = s if s_ref is None else s_ref
            np.testing.assert_allclose(s, s_ref, rtol=1e-12)

    def test_against_brute_force(self):
        T, xi, s2 = 0.1, 0.009, 0.9
        ch, mod = ChannelParams(T, xi), ModulationParams(s2)
        rng = np.random.default_rng(8)
        cb = generate_codebook(31, 4, 8)
        x = rng.normal(0, math.sqrt(s2), 8)
        c = rng.uniform(size=8)
        table = cb.materialize()
        for ell in range(4):
            np.testing.assert_allclose(score(x, cb, c, ell, ch, mod),
                                       brute_score(x, table[ell], c, T, xi, s2), rtol=1e-9)

    def test_score_all_matches_score(self, point):
        ch, mod = point
        cb = generate_codebook(12, 16, 10)
        rng = np.random.default_rng(1)
        x, c = rng.normal(0, 11, 10), rng.uniform(size=10)
        all_s = score_all(x, cb, c, ch, mod).scores
        np.testing.assert_allclose(all_s, [score(x, cb, c, l, ch, mod) for l in range(16)],
                                   rtol=1e-12)

    @given(st.integers(-5, 5))
    def test_mod_one_invariance(self, shift):
        ch, mod = operating_point(1e-3, 134.0)
        cb = generate_codebook(2, 4, 6)
        rng = np.random.default_rng(3)
        x, c = rng.normal(0, 11, 6), rng.uniform(0.01, 0.99, 6)
        table = cb.materialize()
        base = score(x, cb, c, 1, ch, mod, table=table)
        shifted = score(x, cb, c + shift, 1, ch, mod, table=table + shift)
        np.testing.assert_allclose(shifted, base, rtol=1e-9)

    def test_saturation_guard(self):
        y = unmask(np.array([0.3, 0.3]), np.array([0.3, 0.3 - 1.0]), 1.0)
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, gaussian_cdf_inv(SATURATION_EPS), rtol=1e-12)

    def test_nonnegative_scores(self):
        with pytest.raises(ValueError):
            ScoreSet(np.array([1.0, -0.1]))


class TestNoncentralities:
    def test_zero(self, point):
        assert noncentralities(0.0, 41, *point) == (0.0, 0.0)

    def test_typical(self, point):
        ch, mod = point
        v = derived_variances(ch, mod)
        lam1, _ = noncentralities(41.0, 41, ch, mod)
        np.testing.assert_allclose(lam1, 41 * v.sigma_y_given_x2 / (ch.transmission * mod.sigma_x2))

    @given(st.floats(1e-3, 1e4))
    def test_ratio(self, m):
        ch, mod = operating_point(1e-3, 134.0)
        v = derived_variances(ch, mod)
        lam1, lam0 = noncentralities(m, 41, ch, mod)
        np.testing.assert_allclose(lam0 / lam1, v.sigma_y2 / v.sigma_y_given_x2, rtol=1e-14)

    def test_empirical_m(self):
        assert empirical_m(np.array([3.0, 4.0]), 5.0) == 5.0

    def test_negative_m(self, point):
        with pytest.raises(ValueError):
            noncentralities(-1.0, 3, *point)


class TestThreshold:
    def test_literal_rule_at_zero_alpha(self, point):
        ch, mod = point
        v = derived_variances(ch, mod)
        n = 41
        expected = n * v.sigma_y_given_x2 ** 2 / (ch.transmission * mod.sigma_x2)
        np.testing.assert_allclose(threshold(n, n, 0.0, ch, mod, rule="literal"), expected)

    def test_mean_rule_offsets_from_true_score_mean(self, point):
        ch, mod = point
        v = derived_variances(ch, mod)
        lam1, _ = noncentralities(41.0, 41, ch, mod)
        np.testing.assert_allclose(threshold(41.0, 41, -0.55, ch, mod),
                                   v.sigma_y_given_x2 * (41 + lam1) - 0.55 * 41)

    def test_very_negative_alpha(self, point):
        assert threshold(41.0, 41, -99.0, *point) < 0

    def test_unknown_rule(self, point):
        with pytest.raises(ValueError):
            threshold(1.0, 1, 0.0, *point, rule="median")


class TestDecide:
    def test_unique(self):
        assert decide(np.array([0.5, 3.0, 4.0]), 1.0) == Decision(True, 0)

    def test_two_below(self):
        assert not decide(np.array([0.5, 0.7, 4.0]), 1.0).accepted

    def test_all_above(self):
        assert not decide(np.array([2.0, 3.0]), 1.0).accepted

    def test_tie_is_above(self):
        assert not decide(np.array([1.0, 3.0]), 1.0).accepted


class TestClassify:
    @pytest.mark.parametrize("scores, u, case", [
        ([0.5, 3.0, 4.0], 0, 1),
        ([3.0, 0.5, 4.0], 0, 2),
        ([3.0, 0.5, 0.6], 0, 3),
        ([3.0, 2.0, 4.0], 0, 4),
        ([0.5, 0.6, 4.0], 0, 5),
    ])
    def test_cases(self, scores, u, case):
        s = np.array(scores)
        assert classify_outcome(decide(s, 1.0), s, 1.0, u) == case

    def test_inconsistent_decision(self):
        with pytest.raises(ValueError):
            classify_outcome(Decision.reject(), np.array([0.5, 3.0]), 1.0, 0)


@pytest.mark.parametrize("seed", range(20))
def test_neyman_pearson_order(seed):
    rng = np.random.default_rng(seed)
    n, q = int(rng.integers(1, 9)), int(rng.integers(2, 17))
    ch, mod = operating_point(10 ** rng.uniform(-3, -0.5), 10 ** rng.uniform(-0.5, 2.5))
    v = derived_variances(ch, mod)
    cb = generate_codebook(int(rng.integers(2**63)), q, n)
    x = rng.normal(0, math.sqrt(mod.sigma_x2), n)
    y = math.sqrt(ch.transmission) * x + rng.normal(0, v.sigma_y_given_x, n)
    c = encode(y, cb, int(rng.integers(q)), v.sigma_y).c
    s = score_all(x, cb, c, ch, mod).scores
    post = log_posterior(x, cb.materialize(), c, ch, mod)
    np.testing.assert_array_equal(np.argsort(s, kind="stable"), np.argsort(-post, kind="stable"))
