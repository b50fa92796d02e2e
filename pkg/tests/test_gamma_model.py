"""Gamma distribution: presets, density/CDF/quantile oracles, sampling."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from beamuq.gamma_model import (GammaParams, gamma_cdf, gamma_inverse_cdf,
                                gamma_pdf, material_preset, sample_homogeneous)

CONCRETE = material_preset("concrete")
STEEL = material_preset("steel")


def sig3(x: float) -> float:
    return float(f"{x:.3g}")


class TestParams:
    def test_preset_moments_concrete(self):
        assert sig3(CONCRETE.mean()) == 30.0e9
        assert sig3(CONCRETE.std()) == 11.2e9

    def test_preset_moments_steel(self):
        assert sig3(STEEL.mean()) == 200e9
        assert sig3(STEEL.std()) == 6.54e9

    def test_variance_identity(self):
        p = GammaParams(3.5, 2.0)
        assert p.mean() == 3.5 * 2.0
        assert p.variance() == 3.5 * 4.0

    @pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_invalid_params(self, alpha, beta):
        with pytest.raises(ValueError):
            GammaParams(alpha, beta)

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            material_preset("adamantium")


class TestPdf:
    def test_zero_limit_above_one(self):
        assert gamma_pdf(1e-30 * CONCRETE.beta, CONCRETE) < 1e-60

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            gamma_pdf(-1.0, CONCRETE)
        with pytest.raises(ValueError):
            gamma_pdf(float("nan"), CONCRETE)

    def test_normalization(self):
        # Integrate in units of the scale parameter so quad sees the mass.
        total, _ = quad(lambda t: gamma_pdf(t * CONCRETE.beta, CONCRETE)
                        * CONCRETE.beta, 0.0, 60.0 * CONCRETE.alpha, limit=400)
        assert abs(total - 1.0) < 1e-8


class TestCdf:
    def test_limits(self):
        assert gamma_cdf(0.0, CONCRETE) == 0.0
        assert gamma_cdf(1e3 * CONCRETE.mean(), CONCRETE) == pytest.approx(1.0, abs=1e-12)

    def test_exponential_special_case(self):
        p = GammaParams(1.0, 2.5e9)
        for x in (0.5e9, 2.5e9, 9e9):
            assert gamma_cdf(x, p) == pytest.approx(1.0 - math.exp(-x / p.beta),
                                                    rel=1e-13)

    def test_negative_argument(self):
        with pytest.raises(ValueError):
            gamma_cdf(-1.0, CONCRETE)

    def test_quadrature_oracle(self):
        # Independent check: integrate our own density and compare.
        rng = np.random.default_rng(42)
        xs = rng.uniform(0.2, 3.0, size=10) * CONCRETE.mean()
        for x in xs:
            ref, _ = quad(lambda t: gamma_pdf(t, CONCRETE), 0.0, x, limit=200)
            assert abs(gamma_cdf(float(x), CONCRETE) - ref) < 1e-8


class TestInverseCdf:
    def test_exponential_closed_form(self):
        p = GammaParams(1.0, 3.0e9)
        for u in (0.05, 0.4, 0.9):
            assert gamma_inverse_cdf(u, p) == pytest.approx(
                -p.beta * math.log(1.0 - u), rel=1e-10)

    @pytest.mark.parametrize("params", [CONCRETE, STEEL])
    def test_roundtrip(self, params):
        for u in (0.01, 0.5, 0.99):
            x = gamma_inverse_cdf(u, params)
            assert abs(gamma_cdf(x, params) - u) < 1e-9

    def test_bisection_oracle_median(self):
        # Plain bisection on the CDF, independent of the Newton path.
        for params in (CONCRETE, STEEL):
            lo, hi = 0.0, 100.0 * params.mean()
            for _ in range(120):
                mid = 0.5 * (lo + hi)
                if gamma_cdf(mid, params) < 0.5:
                    lo = mid
                else:
                    hi = mid
            ref = 0.5 * (lo + hi)
            assert gamma_inverse_cdf(0.5, params) == pytest.approx(ref, rel=1e-8)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(7)
        u = np.sort(rng.random(500))
        u = u[np.diff(u, prepend=-1.0) > 0]
        x = gamma_inverse_cdf(u, CONCRETE)
        assert np.all(np.diff(x) > 0)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.3, float("nan")])
    def test_domain_errors(self, u):
        with pytest.raises(ValueError):
            gamma_inverse_cdf(u, CONCRETE)


class TestSampling:
    def test_median_at_half(self):
        med = gamma_inverse_cdf(0.5, CONCRETE)
        assert sample_homogeneous(CONCRETE, 0.5) == med

    def test_moment_convergence(self):
        rng = np.random.default_rng(2024)
        samples = sample_homogeneous(CONCRETE, rng.random(100_000))
        se_mean = CONCRETE.std() / math.sqrt(samples.size)
        assert abs(samples.mean() - CONCRETE.mean()) < 3.0 * se_mean
        assert abs(samples.var(ddof=1) - CONCRETE.variance()) \
            < 0.05 * CONCRETE.variance()

    def test_deterministic_given_u(self):
        assert sample_homogeneous(STEEL, 0.73) == sample_homogeneous(STEEL, 0.73)
