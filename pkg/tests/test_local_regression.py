import math

import numpy as np
import pytest

from core.errors import DataError
from core.estimation.local_regression import (
    KernelSpec,
    LocalDesign,
    gaussian_product_kernel,
    kernel_density,
    local_constant_fit,
    local_linear_fit,
    rot_bandwidth,
)


class TestKernel:
    def test_values(self):
        assert gaussian_product_kernel(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert gaussian_product_kernel(1.0) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi))
        assert gaussian_product_kernel(np.array([0.0, 0.0])) == pytest.approx(1 / (2 * math.pi))

    def test_far_tail_is_exact_zero(self):
        assert gaussian_product_kernel(40.0) == 0.0

    def test_stacked_points(self):
        u = np.zeros((3, 4, 2))
        assert gaussian_product_kernel(u).shape == (3, 4)

    def test_bandwidths_must_be_positive(self):
        with pytest.raises(ValueError):
            KernelSpec(bandwidths=(0.2, 0.0))
        with pytest.raises(ValueError):
            KernelSpec(bandwidths=())


class TestBandwidth:
    def test_rule_of_thumb(self, rng):
        x = rng.normal(scale=2.0, size=500)
        expected = 1.06 * x.std(ddof=1) * 500 ** (-2 / 7)
        assert rot_bandwidth(x)[0] == pytest.approx(expected, rel=1e-12)

    def test_rate_follows_dimension(self, rng):
        x = rng.normal(size=(1000, 2))
        expected = 1.06 * x.std(axis=0, ddof=1) * 1000 ** (-2 / 10)
        assert rot_bandwidth(x) == pytest.approx(expected, rel=1e-12)

    def test_constant_coordinate_rejected(self):
        with pytest.raises(DataError):
            rot_bandwidth(np.ones(20))


class TestLocalFits:
    def test_local_linear_is_exact_on_lines(self, rng):
        x1 = rng.uniform(-2, 2, size=200)
        r = 2.0 + 3.0 * x1
        kernel = KernelSpec(bandwidths=(0.3,))
        for x0 in (-1.5, 0.0, 0.7):
            fit = local_linear_fit(x1, r, np.ones(200), np.array([x0]), kernel)
            assert fit.intercept == pytest.approx(2.0 + 3.0 * x0, abs=1e-10)
            assert fit.slope[0] == pytest.approx(3.0, abs=1e-9)
            assert not fit.degenerate

    def test_local_linear_exact_on_planes(self, rng):
        x1 = rng.uniform(-1, 1, size=(400, 2))
        r = 1.0 - x1[:, 0] + 0.5 * x1[:, 1]
        fit = local_linear_fit(x1, r, None, np.array([0.2, -0.1]), KernelSpec(bandwidths=(0.3, 0.4)))
        assert fit.intercept == pytest.approx(1.0 - 0.2 - 0.05, abs=1e-10)
        assert fit.slope == pytest.approx([-1.0, 0.5], abs=1e-9)

    def test_local_constant_is_weighted_mean(self, rng):
        x1 = rng.normal(size=50)
        r = rng.normal(size=50)
        xi = rng.uniform(0.5, 1.5, size=50)
        kernel = KernelSpec(bandwidths=(0.5,))
        weights = np.exp(-0.5 * ((x1 - 0.3) / 0.5) ** 2) * xi
        expected = np.sum(weights * r) / np.sum(weights)
        assert local_constant_fit(x1, r, xi, np.array([0.3]), kernel) == pytest.approx(expected, rel=1e-12)

    def test_singular_design_falls_back_to_constant(self):
        x1 = np.full(30, 0.4)
        r = np.linspace(0.0, 1.0, 30)
        kernel = KernelSpec(bandwidths=(0.2,))
        fit = local_linear_fit(x1, r, np.ones(30), np.array([0.0]), kernel)
        assert fit.degenerate
        assert fit.slope[0] == 0.0
        assert fit.intercept == pytest.approx(local_constant_fit(x1, r, np.ones(30), np.array([0.0]), kernel))

    @pytest.mark.parametrize("spread,degenerate", [(1e-9, True), (1e-3, False)])
    def test_degeneracy_is_relative_to_the_trace(self, rng, spread, degenerate):
        x1 = 0.4 + spread * rng.uniform(-1, 1, size=30)
        r = rng.normal(size=30)
        fit = local_linear_fit(x1, r, np.ones(30), np.array([0.0]), KernelSpec(bandwidths=(0.2,)))
        assert fit.degenerate is degenerate

    def test_zero_mass_is_a_data_error(self):
        with pytest.raises(DataError):
            local_constant_fit(np.array([0.0, 0.1]), np.ones(2), np.zeros(2), np.array([0.0]), KernelSpec(bandwidths=(0.1,)))

    def test_constant_second_stage_reports_nan_slope(self, rng):
        x1 = rng.normal(size=40)
        design = LocalDesign(x1, np.array([[0.0], [0.5]]), KernelSpec(bandwidths=(0.4,)))
        _, slopes, _, degenerate = design.fit(rng.normal(size=40), kind="local_constant")
        assert np.all(np.isnan(slopes))
        assert not degenerate.any()

    def test_unit_multipliers_match_unweighted_fit(self, rng):
        x1 = rng.normal(size=100)
        r = rng.normal(size=100)
        design = LocalDesign(x1, np.linspace(-1, 1, 11)[:, None], KernelSpec(bandwidths=(0.3,)))
        plain = design.fit(r)
        weighted = design.fit(r, np.ones(100))
        assert np.array_equal(plain[0], weighted[0])
        assert np.array_equal(plain[1], weighted[1])


class TestDensity:
    def test_integrates_to_one(self, rng):
        x1 = rng.normal(size=300)
        kernel = KernelSpec(bandwidths=(0.25,))
        points = np.linspace(x1.min() - 3, x1.max() + 3, 4001)
        density = LocalDesign(x1, points[:, None], kernel).density()
        assert np.trapezoid(density, points) == pytest.approx(1.0, abs=1e-6)

    def test_single_point_formula(self):
        x1 = np.array([0.0, 1.0])
        kernel = KernelSpec(bandwidths=(0.5,))
        expected = (gaussian_product_kernel(0.0) + gaussian_product_kernel(-2.0)) / (2 * 0.5)
        assert kernel_density(x1, np.array([0.0]), kernel, 2) == pytest.approx(expected)

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            kernel_density(np.zeros(3), np.zeros(1), KernelSpec(bandwidths=(1.0,)), 0)
