import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st
from scipy import special, stats

from rcad.numerics import (NoncentralChi2, binary_entropy, gaussian_cdf, gaussian_cdf_inv,
                           marcum_q, noncentral_chi2_cdf, noncentral_chi2_sf,
                           regularized_gamma_p, regularized_gamma_q, thermal_entropy_g)

# (z, dof, nc, cdf, sf) from full-range Poisson-mixture sums in 40-digit mpmath
NCX2_ORACLE = [
    (0.5, 3, 0.2, 0.074105308376853738, 0.92589469162314626),
    (10.0, 4, 2.5, 0.81825123408827332, 0.18174876591172668),
    (41.0, 41, 200.0, 5.5722426955614703e-23, 1.0),
    (60.0, 41, 15.0, 0.65378965892898821, 0.34621034107101179),
    (1.0, 10, 1e-06, 0.00017211555098051256, 0.99982788444901949),
    (30000.0, 500, 25000.0, 1.0, 2.4880034478908095e-42),
    (22000.0, 500, 25000.0, 1.6822007708922143e-30, 1.0),
    (9747.7, 105.2, 4816.0, 1.0, 1.5636682946902531e-181),
    (4180.8, 79.0, 8053.5, 9.377268883447239e-145, 1.0),
    (844.6, 251.7, 2594.6, 2.7153533616753493e-139, 1.0),
    (3.0, 2, 0.0, 0.77686983985157017, 0.22313016014842983),
    (0.001, 6, 3.0, 4.6476734662740696e-12, 0.99999999999535233),
    (300.0, 41, 40.0, 1.0, 2.2280558790509495e-20),
]

# (x, g(x)) from 40-digit mpmath
G_ORACLE = [
    (1e-12, 4.1305832179538032e-11),
    (1e-06, 2.1374264331560417e-5),
    (0.01, 0.08093740780458799),
    (0.5, 1.3774437510817343),
    (1.0, 2.0),
    (10.0, 4.8344668561366463),
    (1000.0, 11.409200432742474),
    (100000.0, 18.052342728776935),
    (100000000.0, 28.018119807201337),
]


class TestBinaryEntropy:
    @pytest.mark.parametrize("p, expected", [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0)])
    def test_exact_values(self, p, expected):
        assert binary_entropy(p) == expected

    def test_direct_formula(self):
        np.testing.assert_allclose(binary_entropy(0.1), 0.46900, atol=1e-5)

    @given(st.floats(0.0, 1.0))
    def test_symmetric_and_bounded(self, p):
        h = binary_entropy(p)
        assert 0.0 <= h <= 1.0
        np.testing.assert_allclose(h, binary_entropy(1.0 - p), atol=1e-12)

    def test_array_input(self):
        out = binary_entropy(np.array([0.0, 0.5, 0.25]))
        np.testing.assert_allclose(out, [0.0, 1.0, 0.8112781244591328], rtol=1e-14)

    @pytest.mark.parametrize("p", [-0.1, 1.1, math.nan])
    def test_domain_error(self, p):
        with pytest.raises(ValueError):
            binary_entropy(p)


class TestThermalEntropy:
    @pytest.mark.parametrize("x, expected", G_ORACLE)
    def test_against_mpmath(self, x, expected):
        np.testing.assert_allclose(thermal_entropy_g(x), expected, rtol=1e-13)

    def test_zero(self):
        assert thermal_entropy_g(0.0) == 0.0

    def test_example_half(self):
        np.testing.assert_allclose(thermal_entropy_g(0.5), 1.37744, atol=1e-5)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            thermal_entropy_g(-1e-3)

    @given(st.floats(1e-8, 1e8))
    def test_increasing(self, x):
        assert thermal_entropy_g(x * 1.01) > thermal_entropy_g(x)


class TestGaussian:
    @pytest.mark.parametrize("sigma", [0.3, 1.0, 47.0])
    def test_median(self, sigma):
        assert gaussian_cdf(0.0, sigma) == 0.5
        assert gaussian_cdf_inv(0.5, sigma) == 0.0

    def test_one_sigma(self):
        np.testing.assert_allclose(gaussian_cdf(2.5, 2.5), 0.841345, atol=1e-6)

    def test_far_tail(self):
        assert gaussian_cdf(-10.0 * 3.0, 3.0) < 1e-20
        np.testing.assert_allclose(gaussian_cdf(-30.0, 3.0), special.ndtr(-10.0), rtol=1e-13)

    @pytest.mark.parametrize("p, z", [(0.841345, 1.0), (0.025, -1.95996)])
    def test_quantile_examples(self, p, z):
        np.testing.assert_allclose(gaussian_cdf_inv(p, 1.0), z, atol=1e-4)

    def test_cdf_against_scipy(self):
        z = np.linspace(-37, 8, 2001)
        np.testing.assert_allclose(gaussian_cdf(z), special.ndtr(z), rtol=1e-13, atol=1e-16)

    def test_quantile_against_scipy(self):
        p = np.concatenate([np.logspace(-300, -1, 300), np.linspace(0.01, 0.99, 99),
                            1 - np.logspace(-15, -2, 50)])
        np.testing.assert_allclose(gaussian_cdf_inv(p), special.ndtri(p), rtol=1e-12)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(7)
        p = np.concatenate([rng.uniform(1e-12, 1 - 1e-12, 9000),
                            10.0 ** rng.uniform(-12, -1, 1000)])
        back = gaussian_cdf(gaussian_cdf_inv(p, 2.0), 2.0)
        assert np.max(np.abs(back - p)) <= 1e-9

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_quantile_saturation(self, p):
        assert math.isinf(gaussian_cdf_inv(p))

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            gaussian_cdf(0.0, 0.0)


class TestIncompleteGamma:
    @pytest.mark.parametrize("a", [0.5, 1.0, 3.5, 20.5, 250.0])
    def test_against_scipy(self, a):
        x = a * np.linspace(0.05, 3.0, 60)
        np.testing.assert_allclose(regularized_gamma_p(a, x), special.gammainc(a, x),
                                   rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(regularized_gamma_q(a, x), special.gammaincc(a, x),
                                   rtol=1e-12, atol=1e-300)

    @pytest.mark.parametrize("a, x", [(5000.0, 3500.0), (5000.0, 4800.0), (5000.0, 5200.0),
                                      (5000.0, 7000.0), (5000.0, 8000.0), (2.5e4, 2.2e4)])
    def test_deep_tails_against_mpmath(self, a, x):
        # scipy drifts to ~1e-11 relative out here, so the oracle is mpmath
        mpmath = pytest.importorskip("mpmath")
        with mpmath.workdps(30):
            p = float(mpmath.gammainc(a, 0, x, regularized=True))
            q = float(mpmath.gammainc(a, x, mpmath.inf, regularized=True))
        np.testing.assert_allclose(regularized_gamma_p(a, x), p, rtol=1e-12)
        np.testing.assert_allclose(regularized_gamma_q(a, x), q, rtol=1e-12)

    @given(st.floats(0.1, 1e4), st.floats(0.0, 2e4))
    def test_complement(self, a, x):
        np.testing.assert_allclose(regularized_gamma_p(a, x) + regularized_gamma_q(a, x), 1.0,
                                   atol=1e-13)


class TestNoncentralChi2:
    @pytest.mark.parametrize("z, dof, nc, cdf, sf", NCX2_ORACLE)
    def test_against_mpmath(self, z, dof, nc, cdf, sf):
        np.testing.assert_allclose(noncentral_chi2_cdf(z, dof, nc), cdf, rtol=1e-9)
        np.testing.assert_allclose(noncentral_chi2_sf(z, dof, nc), sf, rtol=1e-9)

    @pytest.mark.parametrize("nc", [1e-300, 1e-30, 1e-12, 1e-8])
    def test_tiny_noncentrality_is_continuous(self, nc):
        np.testing.assert_allclose(noncentral_chi2_cdf(1.0, 2, nc), 1 - math.exp(-0.5), rtol=1e-7)
        np.testing.assert_allclose(noncentral_chi2_cdf(1.0, 2, nc) + noncentral_chi2_sf(1.0, 2, nc),
                                   1.0, atol=1e-15)

    def test_support_start(self):
        assert noncentral_chi2_cdf(0.0, 7, 3.0) == 0.0

    def test_central_closed_form(self):
        np.testing.assert_allclose(noncentral_chi2_cdf(2.0, 2, 0.0), 1 - math.exp(-1), rtol=1e-14)

    def test_example_against_integration(self):
        # adaptive quadrature of the density as an independent route
        from scipy.integrate import quad
        ref, _ = quad(lambda t: stats.ncx2.pdf(t, 4, 1.0), 0, 5, epsabs=1e-14, epsrel=1e-13)
        np.testing.assert_allclose(noncentral_chi2_cdf(5.0, 4, 1.0), ref, rtol=1e-10)

    def test_bulk_against_scipy(self):
        rng = np.random.default_rng(3)
        dof = rng.integers(1, 10_000, 400).astype(float)
        nc = 10.0 ** rng.uniform(-3, 6, 400)
        mean, sd = dof + nc, np.sqrt(2 * dof + 4 * nc)
        z = np.maximum(mean + sd * rng.uniform(-3, 3, 400), 1e-3)
        np.testing.assert_allclose(noncentral_chi2_cdf(z, dof, nc), stats.ncx2.cdf(z, dof, nc),
                                   rtol=1e-9, atol=1e-13)

    def test_complement_identity(self):
        rng = np.random.default_rng(11)
        dof = rng.integers(1, 5000, 3000).astype(float)
        nc = 10.0 ** rng.uniform(-6, 6, 3000)
        z = (dof + nc) * 10.0 ** rng.uniform(-1, 0.5, 3000)
        total = noncentral_chi2_cdf(z, dof, nc) + noncentral_chi2_sf(z, dof, nc)
        assert np.max(np.abs(total - 1.0)) <= 1e-12

    def test_monotone_grid(self):
        # 1000-point grid: nondecreasing in z, nonincreasing in nc
        z = np.linspace(0.0, 400.0, 1000)
        c = noncentral_chi2_cdf(z, 41, 150.0)
        assert np.all(np.diff(c) >= 0)
        nc = np.linspace(0.0, 400.0, 1000)
        c = noncentral_chi2_cdf(180.0, 41, nc)
        assert np.all(np.diff(c) <= 0)

    def test_moments_by_sampling(self):
        rng = np.random.default_rng(5)
        mu = np.array([0.5, -1.0, 2.0, 0.0, 1.5])
        draws = np.sum((mu + rng.standard_normal((100_000, mu.size))) ** 2, axis=1)
        law = NoncentralChi2(mu.size, float(mu @ mu))
        se_mean = math.sqrt(law.var / draws.size)
        assert abs(draws.mean() - law.mean) < 3 * se_mean
        # fourth central moment from the cumulants: kappa_4 = 48 (dof + 4 nc)
        m4 = 48.0 * (law.dof + 4.0 * law.nc) + 3.0 * law.var ** 2
        se_var = math.sqrt((m4 - law.var ** 2) / draws.size)
        assert abs(draws.var() - law.var) < 3 * se_var

    @pytest.mark.parametrize("dof, nc", [(0, 1.0), (3, -1.0)])
    def test_invalid_params(self, dof, nc):
        with pytest.raises(ValueError):
            NoncentralChi2(dof, nc)


class TestMarcumQ:
    @pytest.mark.parametrize("order", [0.5, 1.0, 20.5, 300.0])
    def test_zero_b(self, order):
        assert marcum_q(order, 3.0, 0.0) == 1.0

    @pytest.mark.parametrize("b", [0.1, 1.0, 3.0, 8.0])
    def test_central_first_order(self, b):
        np.testing.assert_allclose(marcum_q(1, 0.0, b), math.exp(-b * b / 2), rtol=1e-13)

    def test_half_integer_example(self):
        # same Poisson-mixture oracle route as above, via scipy's ncx2 in the bulk
        np.testing.assert_allclose(marcum_q(20.5, 12.0, 13.0), stats.ncx2.sf(169.0, 41.0, 144.0),
                                   rtol=1e-9)

    @given(st.floats(0.5, 500.0), st.floats(0.0, 60.0), st.floats(0.0, 80.0))
    @example(1.0, 1e-15, 1.0)
    def test_identity_with_cdf(self, nu, a, b):
        total = marcum_q(nu, a, b) + noncentral_chi2_cdf(b * b, 2 * nu, a * a)
        assert abs(total - 1.0) <= 1e-12

    def test_invalid(self):
        with pytest.raises(ValueError):
            marcum_q(0, 1.0, 1.0)
        with pytest.raises(ValueError):
            marcum_q(1, -1.0, 1.0)
