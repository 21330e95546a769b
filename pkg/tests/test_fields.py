"""Field sampling and grid antiderivative verification.

The exact antiderivative path is checked against an independent closed-form
oracle: per-cell weights w_j = integral over cell_j of (X-t)^(n-1)/(n-1)!
applied to the mirror-extended cell values.
"""

import math

import numpy as np
import pytest

from nfconv.errors import UnsupportedBackendError, ValidationError
from nfconv.fields import (
    AnalyticField,
    GridField,
    GridOracleField,
    grid_repeated_antiderivative,
    sample_antiderivative,
)


def mirror_cell_index(j, res):
    jj = np.mod(j, 2 * res)
    return np.where(jj >= res, 2 * res - 1 - jj, jj)


def oracle_antiderivative_1d(values, order, x):
    """Closed-form order-n antiderivative of the cell-constant signal."""
    res = values.shape[0]
    h = 1.0 / res
    x0 = -float(order)
    ncells = res * (2 * order + 1)
    a = x0 + np.arange(ncells) * h
    b = a + h
    lo = np.minimum(a, x)
    hi = np.minimum(b, x)
    wa = (x - lo) ** order / math.factorial(order)
    wb = (x - hi) ** order / math.factorial(order)
    w = np.where(hi > lo, wa - wb, 0.0)
    cells = values[mirror_cell_index(np.arange(-order * res, (order + 1) * res), res)]
    return np.einsum("i,ic->c", w, cells)


class TestSampling:
    def test_constant_grid(self):
        f = GridField(np.full((4, 4, 1), 5.0))
        for p in ([0.1, 0.9], [0.5, 0.5], [-0.3, 1.2]):
            assert f.sample(p)[0] == pytest.approx(5.0)

    def test_linear_interpolation_between_nodes(self):
        f = GridField(np.array([[0.0], [1.0]]))
        # nodes at 0.25 and 0.75; halfway between them
        assert f.sample([0.5])[0] == pytest.approx(0.5)

    def test_mirror_rule(self):
        rng = np.random.default_rng(0)
        f = GridField(rng.uniform(0, 1, (8, 1)))
        assert f.sample([-0.1])[0] == pytest.approx(f.sample([0.1])[0], abs=1e-14)

    def test_even_extension_property(self):
        rng = np.random.default_rng(1)
        f = GridField(rng.uniform(0, 1, (8, 8, 2)))
        pts = rng.uniform(0.0, 0.4, size=(64, 2))
        neg = pts.copy()
        neg[:, 0] *= -1.0
        np.testing.assert_allclose(f.sample_many(neg), f.sample_many(pts), atol=1e-13)

    def test_continuity_across_cells(self):
        rng = np.random.default_rng(2)
        f = GridField(rng.uniform(0, 1, (16, 16, 1)))
        eps = 1e-14  # small enough that slope * eps is below tolerance
        for face in (4 / 16, 9 / 16):  # node coordinates are cell centers
            a = f.sample([face - eps, 0.37])[0]
            b = f.sample([face + eps, 0.37])[0]
            assert abs(a - b) < 1e-12

    def test_nan_input_rejected(self):
        f = GridField(np.zeros((4, 1)))
        with pytest.raises(ValidationError):
            f.sample_many(np.array([[np.nan]]))

    def test_analytic_field_mirrors(self):
        f = AnalyticField(lambda x: x.copy(), 1, 1)
        assert f.sample([-0.1])[0] == pytest.approx(0.1)
        assert f.sample([1.3])[0] == pytest.approx(0.7)


class TestGridAntiderivative:
    def test_requires_grid_backend(self):
        f = AnalyticField(lambda x: x.copy(), 1, 1)
        with pytest.raises(UnsupportedBackendError):
            grid_repeated_antiderivative(f, 1)

    def test_ones_give_ramp(self):
        res = 32
        f = GridField(np.ones((res, 1)))
        g = grid_repeated_antiderivative(f, 1)
        for x in (0.1, 0.33, 0.9):
            # antiderivative from the padded corner at -1: value x + 1
            val = sample_antiderivative(g, [x])[0]
            assert abs(val - (x + 1.0)) < 1.0 / res

    def test_impulse_gives_step(self):
        res = 16
        vals = np.zeros((res, 1))
        vals[7, 0] = 1.0
        f = GridField(vals)
        g = grid_repeated_antiderivative(f, 1)
        h = 1.0 / res
        # flat below the impulse cell, flat above, one step of the cell mass
        lo_a = g.sample_exact([0.2])[0]
        lo_b = g.sample_exact([7 / res - 1e-9])[0]
        hi_a = g.sample_exact([8 / res + 1e-9])[0]
        hi_b = g.sample_exact([0.95])[0]
        assert lo_a == pytest.approx(lo_b, abs=1e-12)
        assert hi_a == pytest.approx(hi_b, abs=1e-12)
        assert hi_a - lo_b == pytest.approx(h, abs=1e-12)  # impulse cell mass

    def test_prefix_difference_round_trip(self):
        rng = np.random.default_rng(3)
        res = 12
        vals = rng.uniform(0, 1, (res, 1))
        f = GridField(vals)
        for order in (1, 2):
            g = grid_repeated_antiderivative(f, order)
            arr = g.prefix[:, 0]
            for _ in range(order):
                arr = np.diff(arr, prepend=0.0) * res
            recovered = arr[order * res: (order + 1) * res]
            scale = np.maximum(np.abs(vals[:, 0]), 1e-3)
            assert np.max(np.abs(recovered - vals[:, 0]) / scale) < 1e-9

    def test_multilinear_matches_closed_form_within_cell(self):
        res = 32
        f = GridField(np.ones((res, 1)))
        for order in (1, 2):
            g = grid_repeated_antiderivative(f, order)
            for x in (0.21, 0.58):
                # for f = 1: F^n(x) = (x + order)^n / n!
                ref = (x + order) ** order / math.factorial(order)
                val = sample_antiderivative(g, [x])[0]
                assert abs(val - ref) < (order + 1) / res

    def test_exact_sampler_matches_oracle_1d(self):
        rng = np.random.default_rng(4)
        res = 16
        vals = rng.uniform(0, 1, (res, 2))
        f = GridField(vals)
        for order in (1, 2, 3):
            g = grid_repeated_antiderivative(f, order)
            for x in rng.uniform(-order + 0.05, order + 0.95, 20):
                ref = oracle_antiderivative_1d(vals, order, x)
                got = g.sample_exact([x])
                np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)

    def test_exact_sampler_matches_oracle_2d(self):
        rng = np.random.default_rng(5)
        res = 8
        vals = rng.uniform(0, 1, (res, res, 2))
        f = GridField(vals)
        h = 1.0 / res

        def oracle_2d(order, pt):
            x0 = -float(order)
            ncells = res * (2 * order + 1)
            idx = mirror_cell_index(np.arange(-order * res, (order + 1) * res), res)

            def axis_w(X):
                a = x0 + np.arange(ncells) * h
                b = a + h
                lo = np.minimum(a, X)
                hi = np.minimum(b, X)
                wa = (X - lo) ** order / math.factorial(order)
                wb = (X - hi) ** order / math.factorial(order)
                return np.where(hi > lo, wa - wb, 0.0)

            V = vals[idx[:, None], idx[None, :]]
            return np.einsum("i,ijc,j->c", axis_w(pt[0]), V, axis_w(pt[1]))

        for order in (1, 2):
            g = grid_repeated_antiderivative(f, order)
            for pt in rng.uniform(-order + 0.05, order + 0.95, size=(8, 2)):
                np.testing.assert_allclose(g.sample_exact(pt), oracle_2d(order, pt),
                                           rtol=1e-10, atol=1e-12)

    def test_constant_of_integration_zero_at_corner(self):
        f = GridField(np.random.default_rng(6).uniform(0, 1, (8, 1)))
        g = grid_repeated_antiderivative(f, 2)
        assert g.sample_exact([-2.0])[0] == pytest.approx(0.0, abs=1e-12)

    def test_partial_axes(self):
        rng = np.random.default_rng(7)
        vals = rng.uniform(0, 1, (6, 4, 1))
        f = GridField(vals)
        g = grid_repeated_antiderivative(f, 1, axes=(0,))
        # integrated along axis 0 only; axis 1 stays at source resolution
        assert g.padded_shape == (18, 4)


class TestGridOracleField:
    def test_protocol_surface(self):
        rng = np.random.default_rng(8)
        f = GridField(rng.uniform(0, 1, (8, 8, 3)))
        h = GridOracleField(f, order=2)
        assert h.order == 2 and h.kernel_dim == 2 and h.dout == 3
        pts = rng.uniform(0, 1, size=(5, 2))
        np.testing.assert_array_equal(h.eval_many(pts),
                                      h.antiderivative.sample_exact_many(pts))

    def test_kernel_dim_validation(self):
        f = GridField(np.zeros((4, 4, 1)))
        with pytest.raises(ValidationError):
            GridOracleField(f, order=1, kernel_dim=3)
