"""KL expansion, transcendental roots, normal helpers, Gamma transform."""

import math

import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import kstest

from beamuq.gamma_model import gamma_cdf, gamma_inverse_cdf, material_preset
from beamuq.mesh import BeamGeometry, build_mesh
from beamuq.random_field import (CovarianceSpec, FieldSample, basis_matrix,
                                 build_kl_basis_2d, eigenfunction_1d,
                                 evaluate_gaussian_field, field_on_elements,
                                 kl_eigenpairs_1d, solve_transcendental_roots,
                                 standard_normal_cdf, standard_normal_quantile,
                                 transform_to_gamma, write_term_table)

LAM = 0.3
CONCRETE = material_preset("concrete")


@pytest.fixture(scope="module")
def basis():
    return build_kl_basis_2d(CovarianceSpec(sigma=1.0, lam=LAM), 0.90)


def gauss_grid(n=600):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


class TestNormalHelpers:
    def test_cdf_symmetry(self):
        z = np.linspace(-6, 6, 41)
        assert np.allclose(standard_normal_cdf(z) + standard_normal_cdf(-z), 1.0,
                           atol=1e-15)

    def test_quantile_vs_scipy(self):
        u = np.array([1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1 - 1e-9])
        assert np.allclose(standard_normal_quantile(u), ndtri(u),
                           rtol=0, atol=2e-12)

    def test_roundtrip(self):
        z = np.linspace(-5.5, 0.0, 12)
        back = standard_normal_quantile(standard_normal_cdf(z))
        assert np.max(np.abs(back - z)) < 1e-12
        # The upper tail is limited by rounding of Phi(z) itself near 1.
        z = np.linspace(0.5, 5.5, 11)
        back = standard_normal_quantile(standard_normal_cdf(z))
        assert np.max(np.abs(back - z)) < 3e-9

    def test_quantile_domain(self):
        with pytest.raises(ValueError):
            standard_normal_quantile(0.0)


class TestRoots:
    def test_residual_and_ordering(self):
        w = solve_transcendental_roots(LAM, 50)
        residual = np.abs((LAM ** 2 * w ** 2 - 1.0) * np.tan(w) - 2.0 * LAM * w)
        assert residual.max() < 1e-10
        assert np.all(np.diff(w) > 0)

    def test_asymptotic_spacing(self):
        w = solve_transcendental_roots(LAM, 80)
        n = np.arange(1, 81)
        # One root per pi interval: w_n - (n-1) pi stays bounded in (0, pi).
        offsets = w - (n - 1) * math.pi
        assert np.all(offsets > 0) and np.all(offsets < math.pi)
        assert abs(w[-1] / (80 * math.pi) - 1.0) < 0.02

    def test_bisection_oracle(self):
        # Independent bisection on the bracketed form over shifted intervals.
        def h(w):
            return (LAM ** 2 * w ** 2 - 1.0) * math.sin(w) - 2.0 * LAM * w * math.cos(w)

        w = solve_transcendental_roots(LAM, 10)
        for n, wn in enumerate(w, start=1):
            lo, hi = wn - 1e-3, wn + 1e-3
            assert h(lo) * h(hi) < 0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if h(lo) * h(mid) <= 0:
                    hi = mid
                else:
                    lo = mid
            assert wn == pytest.approx(0.5 * (lo + hi), abs=1e-9)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            solve_transcendental_roots(-1.0, 5)
        with pytest.raises(ValueError):
            solve_transcendental_roots(LAM, 0)


class TestEigenpairs1D:
    def test_theta_decreasing(self):
        theta, _, _ = kl_eigenpairs_1d(LAM, 50)
        assert np.all(np.diff(theta) < 0)

    def test_unit_norm_by_quadrature(self):
        theta, w, a = kl_eigenpairs_1d(LAM, 50)
        x, wq = gauss_grid()
        b = eigenfunction_1d(LAM, w, a, x)
        norms = (b * b) @ wq
        assert np.max(np.abs(norms - 1.0)) < 1e-8

    def test_orthogonality(self):
        theta, w, a = kl_eigenpairs_1d(LAM, 50)
        x, wq = gauss_grid()
        b = eigenfunction_1d(LAM, w, a, x)
        gram = (b * wq) @ b.T
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-8

    def test_trace_approaches_sigma_squared(self):
        theta, _, _ = kl_eigenpairs_1d(LAM, 500)
        assert abs(theta.sum() - 1.0) < 0.01


class TestBasis2D:
    def test_term_count_matches_reference(self, basis):
        assert 98 <= basis.n_terms <= 104

    def test_sorted_and_minimal(self, basis):
        assert np.all(np.diff(basis.theta_2d) <= 0)
        cum = np.cumsum(basis.theta_2d)
        assert cum[-1] >= 0.90 * basis.total_trace
        assert cum[-2] < 0.90 * basis.total_trace
        assert basis.captured_fraction >= 0.90

    def test_truncation_keeps_largest(self, basis):
        # No excluded tensor candidate may exceed the smallest kept term.
        nb = 150
        theta1 = basis.theta_1d[:nb]
        prod = np.sort((theta1[:, None] * theta1[None, :]).ravel())[::-1]
        assert prod[basis.n_terms] <= basis.theta_2d[-1] + 1e-15

    def test_unreachable_target_raises(self):
        with pytest.raises(RuntimeError, match="achieved"):
            build_kl_basis_2d(CovarianceSpec(sigma=1.0, lam=LAM), 0.90,
                              max_terms=10)

    def test_export(self, basis, tmp_path):
        path = tmp_path / "basis.csv"
        write_term_table(basis, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == basis.n_terms + 1
        assert lines[0].startswith("n,i,j,theta_2d")


class TestFieldEvaluation:
    def test_zero_weights(self, basis):
        pts = np.array([[0.1, 0.2], [0.9, 0.4]])
        z = evaluate_gaussian_field(basis, FieldSample(np.zeros(basis.n_terms)), pts)
        assert np.all(z == 0.0)

    def test_linearity(self, basis):
        rng = np.random.default_rng(0)
        xi1 = rng.standard_normal(basis.n_terms)
        xi2 = rng.standard_normal(basis.n_terms)
        pts = rng.random((20, 2))
        z1 = evaluate_gaussian_field(basis, FieldSample(xi1), pts)
        z2 = evaluate_gaussian_field(basis, FieldSample(xi2), pts)
        z12 = evaluate_gaussian_field(basis, FieldSample(2.0 * xi1 - 3.0 * xi2), pts)
        assert np.allclose(z12, 2.0 * z1 - 3.0 * z2, rtol=1e-12, atol=1e-13)

    def test_dimension_mismatch(self, basis):
        with pytest.raises(ValueError):
            evaluate_gaussian_field(basis, FieldSample(np.zeros(3)),
                                    np.array([[0.5, 0.5]]))

    def test_covariance_against_truncated_kernel(self, basis):
        pts = np.array([[0.25, 0.5], [0.45, 0.7]])
        mat = basis_matrix(basis, pts)
        # The sample covariance estimates the truncated-series covariance.
        target = float(mat[:, 0] @ mat[:, 1])
        v0 = float(mat[:, 0] @ mat[:, 0])
        v1 = float(mat[:, 1] @ mat[:, 1])
        rng = np.random.default_rng(11)
        n = 100_000
        xi = rng.standard_normal((n, basis.n_terms))
        z = xi @ mat
        emp = np.cov(z[:, 0], z[:, 1])[0, 1]
        se = math.sqrt((v0 * v1 + target ** 2) / n)
        assert abs(emp - target) < 3.0 * se
        # And the truncated covariance sits near the analytic kernel.
        dist = np.abs(pts[0] - pts[1]).sum()
        assert target == pytest.approx(math.exp(-dist / LAM), rel=0.15)


class TestGammaTransform:
    def test_median_maps_to_median(self):
        med = gamma_inverse_cdf(0.5, CONCRETE)
        assert transform_to_gamma(0.0, CONCRETE) == pytest.approx(med, rel=1e-12)

    def test_monotone(self):
        z = np.linspace(-6, 6, 200)
        g = transform_to_gamma(z, CONCRETE)
        assert np.all(np.diff(g) > 0)

    def test_kolmogorov_smirnov(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal(10_000)
        g = transform_to_gamma(z, CONCRETE)
        stat = kstest(g, lambda x: gamma_cdf(x, CONCRETE)).statistic
        assert stat < 1.63 / math.sqrt(g.size)  # 1% critical value

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            transform_to_gamma(float("inf"), CONCRETE)


class TestFieldOnElements:
    @pytest.fixture(scope="class")
    def mesh(self):
        return build_mesh(BeamGeometry(), 1)

    def test_zero_field_is_median(self, basis, mesh):
        field = field_on_elements(basis, FieldSample(np.zeros(basis.n_terms)),
                                  mesh, CONCRETE)
        med = gamma_inverse_cdf(0.5, CONCRETE)
        assert np.allclose(field, med, rtol=1e-12)

    def test_positive_and_deterministic(self, basis, mesh):
        rng = np.random.default_rng(3)
        sample = FieldSample(rng.standard_normal(basis.n_terms))
        f1 = field_on_elements(basis, sample, mesh, CONCRETE)
        f2 = field_on_elements(basis, sample, mesh, CONCRETE)
        assert np.all(f1 > 0)
        assert np.array_equal(f1, f2)

    def test_level_coupling_is_smooth(self, basis):
        # Same draw on two nested levels: fine values at elements around a
        # coarse midpoint stay within O(h) of the coarse value.
        rng = np.random.default_rng(9)
        sample = FieldSample(rng.standard_normal(basis.n_terms))
        coarse = build_mesh(BeamGeometry(), 1)
        fine = build_mesh(BeamGeometry(), 2)
        fc = field_on_elements(basis, sample, coarse, CONCRETE)
        ff = field_on_elements(basis, sample, fine, CONCRETE)
        # The four fine children of coarse element (i, j) in row-major ids.
        for ce in (0, 37, coarse.n_elems - 1):
            ci, cj = ce % coarse.nx, ce // coarse.nx
            children = [(2 * cj + dj) * fine.nx + 2 * ci + di
                        for dj in (0, 1) for di in (0, 1)]
            assert abs(np.mean(ff[children]) - fc[ce]) < 0.3 * abs(fc[ce])
        rel = np.abs(np.mean(ff.reshape(-1)) - np.mean(fc)) / np.mean(fc)
        assert rel < 0.05
