"""Kernel-mixture verification: ramps, reconstruction, fitting, transforms.

Derived expectations are computed by independent means: finite-difference
mass integration for the Dirac duality, dense quadrature for masses and
MSEs, and closed-form derivatives of box/tent kernels.
"""

import math

import numpy as np
import pytest

from nfconv.errors import (
    EmptyKernelError,
    InfeasibleBudgetError,
    InvalidTransformError,
    OrderMismatchError,
)
from nfconv.kernels import (
    DiracMixture,
    FitConfig,
    TargetKernel,
    TransformSpec,
    differentiate_to_diracs,
    fit_kernel,
    kernel_eval,
    kernel_eval_batch,
    kernel_mass,
    minimal_kernel,
    mixture_from_dict,
    mixture_to_dict,
    prune,
    ramp_eval,
    separable_product,
    transform_kernel,
)


def box_mixture(side=0.5):
    """Analytic derivative of a unit-mass 1D box: two opposite steps."""
    return DiracMixture(1, 1, np.array([[-side / 2], [side / 2]]),
                        np.array([1.0 / side, -1.0 / side]))


def tent_mixture(w=0.25):
    """Analytic second derivative of the unit-mass tent of half-width w."""
    return DiracMixture(1, 2, np.array([[-w], [0.0], [w]]),
                        np.array([1.0, -2.0, 1.0]) / w ** 2)


class TestRamp:
    def test_unit_step(self):
        assert ramp_eval(1, 1, [0.5]) == 1.0
        assert ramp_eval(1, 1, [-0.1]) == 0.0

    def test_linear_ramp(self):
        assert ramp_eval(2, 1, [2.0]) == 2.0

    def test_2d_order2(self):
        assert ramp_eval(2, 2, [2.0, 3.0]) == pytest.approx(6.0)

    def test_antiderivative_recursion(self):
        # d/dx ramp_n = ramp_(n-1) away from the origin
        for n in (2, 3):
            for x in (0.13, 0.71, 1.9):
                h = 1e-6
                fd = (ramp_eval(n, 1, [x + h]) - ramp_eval(n, 1, [x - h])) / (2 * h)
                ref = ramp_eval(n - 1, 1, [x])
                assert abs(fd - ref) / abs(ref) < 1e-5


class TestKernelEval:
    def test_single_dirac_step(self):
        m = DiracMixture(1, 1, np.array([[0.0]]), np.array([1.0]))
        assert kernel_eval(m, [0.3]) == 1.0
        assert kernel_eval(m, [-0.3]) == 0.0

    def test_box_superposition(self):
        m = DiracMixture(1, 1, np.array([[-0.25], [0.25]]), np.array([2.0, -2.0]))
        assert kernel_eval(m, [0.0]) == pytest.approx(2.0)
        assert kernel_eval(m, [0.3]) == pytest.approx(0.0)

    def test_tent_peak(self):
        m = tent_mixture(0.25)
        assert kernel_eval(m, [0.0]) == pytest.approx(4.0)
        # tent is box*box: compare against the analytic tent at a few points
        target = TargetKernel("tent", 0.5, 1)
        xs = np.linspace(-0.3, 0.3, 13)[:, None]
        np.testing.assert_allclose(kernel_eval_batch(m, xs),
                                   target.evaluate(xs), atol=1e-12)


class TestDiracDuality:
    def test_identity_on_mixture(self):
        m = box_mixture()
        d = differentiate_to_diracs(m)
        assert np.array_equal(d.positions, m.positions)
        assert np.array_equal(d.magnitudes, m.magnitudes)

    def test_fd_mass_recovers_box_magnitudes(self):
        """First finite difference of the reconstruction integrates to the mags."""
        m = box_mixture(0.5)
        h = 1e-3
        dx = h / 20.0
        for c, w in zip(m.positions[:, 0], m.magnitudes):
            xs = np.arange(c - 5 * h, c + 5 * h, dx)
            plus = kernel_eval_batch(m, (xs + h / 2)[:, None])
            minus = kernel_eval_batch(m, (xs - h / 2)[:, None])
            mass = np.sum((plus - minus) / h) * dx
            assert abs(mass - w) / abs(w) < 0.02

    def test_fd_mass_recovers_tent_magnitudes(self):
        """Second finite difference of the tent integrates to {1,-2,1}/w^2."""
        m = tent_mixture(0.25)
        h = 1e-3
        dx = h / 20.0
        for c, w in zip(m.positions[:, 0], m.magnitudes):
            xs = np.arange(c - 5 * h, c + 5 * h, dx)
            vals = (kernel_eval_batch(m, (xs + h)[:, None])
                    - 2 * kernel_eval_batch(m, xs[:, None])
                    + kernel_eval_batch(m, (xs - h)[:, None])) / h ** 2
            mass = np.sum(vals) * dx
            assert abs(mass - w) / abs(w) < 0.02

    def test_bilinear_patch_four_corners(self):
        """A 2D bilinear patch reduces to four corner Diracs under mixed differences."""
        m = separable_product([box_mixture(0.5), box_mixture(0.5)])
        assert len(m) == 4
        h = 1e-3
        dx = h / 10.0
        for c, w in zip(m.positions, m.magnitudes):
            g = np.arange(-4 * h, 4 * h, dx)
            xx, yy = np.meshgrid(c[0] + g, c[1] + g, indexing="ij")
            pts = np.stack([xx.ravel(), yy.ravel()], axis=1)

            def k(sx, sy):
                return kernel_eval_batch(m, pts + np.array([sx, sy]) * (h / 2))

            mixed = (k(1, 1) - k(-1, 1) - k(1, -1) + k(-1, -1)) / h ** 2
            mass = np.sum(mixed) * dx * dx
            assert abs(mass - w) / abs(w) < 0.02


class TestFit:
    def test_box_recovers_exact_edges(self):
        cfg = FitConfig(budget=2, iterations=4000, batch_size=2048, seed=3)
        m = fit_kernel(TargetKernel("box", 0.5, 1), 1, cfg)
        order = np.argsort(m.positions[:, 0])
        np.testing.assert_allclose(m.positions[order, 0], [-0.25, 0.25], atol=1e-3)
        np.testing.assert_allclose(m.magnitudes[order], [2.0, -2.0], atol=1e-3)
        assert m.meta["mse"] < 1e-6

    def test_infeasible_budget(self):
        with pytest.raises(InfeasibleBudgetError):
            fit_kernel(TargetKernel("gaussian", 0.2, 1), 2,
                       FitConfig(budget=2, iterations=10))

    def test_deterministic_given_seed(self):
        cfg = FitConfig(budget=4, iterations=300, batch_size=256, seed=11)
        a = fit_kernel(TargetKernel("gaussian", 0.2, 1), 2, cfg)
        b = fit_kernel(TargetKernel("gaussian", 0.2, 1), 2, cfg)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.magnitudes, b.magnitudes)

    def test_generous_budget_is_pruned(self):
        # narrow kernel, generous budget: Diracs over the empty tails
        # collapse and are removed during the fit
        cfg = FitConfig(budget=24, iterations=4000, batch_size=2048, seed=0)
        m = fit_kernel(TargetKernel("gaussian", 0.08, 1), 1, cfg)
        assert len(m) < 24

    def test_zero_sum_invariant(self):
        cfg = FitConfig(budget=7, iterations=6000, batch_size=2048, seed=0)
        m = fit_kernel(TargetKernel("gaussian", 0.2, 1), 2, cfg)
        assert abs(m.magnitudes.sum()) < 1e-3 * np.abs(m.magnitudes).sum()


class TestPrune:
    def test_zero_threshold_is_identity(self):
        m = box_mixture()
        assert prune(m, 0.0) is m

    def test_drops_tiny_magnitudes(self):
        m = DiracMixture(1, 1, np.array([[0.0], [0.5]]), np.array([1.0, 1e-9]))
        kept = prune(m, 1e-6)
        assert len(kept) == 1
        assert kept.magnitudes[0] == 1.0

    def test_empty_result_raises(self):
        m = box_mixture()
        with pytest.raises(EmptyKernelError):
            prune(m, 1e9)


class TestTransform:
    def test_identity(self):
        m = tent_mixture()
        t = transform_kernel(m, TransformSpec(np.ones(1)))
        np.testing.assert_array_equal(t.positions, m.positions)
        np.testing.assert_array_equal(t.magnitudes, m.magnitudes)

    def test_order1_scale2(self):
        m = DiracMixture(1, 1, np.array([[0.5]]), np.array([4.0]))
        t = transform_kernel(m, TransformSpec(np.array([2.0])))
        assert t.positions[0, 0] == 1.0
        assert t.magnitudes[0] == 2.0  # 4 / det^1

    def test_change_of_variables_identity(self):
        # reconstructed transformed kernel equals ghat(x/s)/s
        m = tent_mixture(0.25)
        for s in (0.5, 2.0, 4.0):
            mt = transform_kernel(m, TransformSpec(np.array([s])))
            xs = np.linspace(-1.2, 1.2, 257)[:, None]
            lhs = kernel_eval_batch(mt, xs)
            rhs = kernel_eval_batch(m, xs / s) / s
            assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_composition(self):
        m = tent_mixture(0.25)
        t1 = TransformSpec(np.array([2.0]), np.array([0.125]))
        t2 = TransformSpec(np.array([0.5]), np.array([-0.25]))
        once = transform_kernel(transform_kernel(m, t1), t2)
        combined = TransformSpec(t2.scale * t1.scale, t2.scale * t1.shift + t2.shift)
        direct = transform_kernel(m, combined)
        np.testing.assert_array_equal(once.positions, direct.positions)
        np.testing.assert_allclose(once.magnitudes, direct.magnitudes, rtol=1e-12)

    def test_negative_scale_rejected(self):
        with pytest.raises(InvalidTransformError):
            TransformSpec(np.array([-1.0]))


class TestSeparable:
    def test_two_boxes_make_sat_corners(self):
        m = separable_product([box_mixture(0.5), box_mixture(0.5)])
        assert len(m) == 4
        signs = {}
        for p, w in zip(m.positions, m.magnitudes):
            signs[(np.sign(p[0]), np.sign(p[1]))] = np.sign(w)
        assert signs[(-1, -1)] == 1 and signs[(1, 1)] == 1
        assert signs[(-1, 1)] == -1 and signs[(1, -1)] == -1

    def test_gaussian_169(self):
        base = DiracMixture(1, 2, np.linspace(-0.5, 0.5, 13)[:, None], np.ones(13))
        m = separable_product([base, base])
        assert len(m) == 169
        assert m.dim == 2

    def test_single_factor_identity(self):
        m = box_mixture()
        assert separable_product([m]) is m

    def test_order_mismatch(self):
        with pytest.raises(OrderMismatchError):
            separable_product([box_mixture(), tent_mixture()])


class TestMinimalKernel:
    def test_order1_diracs(self):
        _, m = minimal_kernel(1, 1, 0.2)
        order = np.argsort(m.positions[:, 0])
        np.testing.assert_allclose(m.positions[order, 0], [-0.1, 0.1])
        np.testing.assert_allclose(m.magnitudes[order], [5.0, -5.0])

    def test_order2_diracs(self):
        _, m = minimal_kernel(2, 1, 0.25)
        order = np.argsort(m.positions[:, 0])
        np.testing.assert_allclose(m.positions[order, 0], [-0.25, 0.0, 0.25])
        np.testing.assert_allclose(m.magnitudes[order], [16.0, -32.0, 16.0])

    def test_dirac_count(self):
        for n, d in [(1, 1), (2, 2), (3, 2), (1, 3)]:
            _, m = minimal_kernel(n, d, 0.1)
            assert len(m) == (n + 1) ** d

    def test_unit_mass_per_axis(self):
        # piecewise Gauss quadrature aligned to the junctions (the spline is
        # discontinuous at the box edges for n=1)
        nodes, weights = np.polynomial.legendre.leggauss(2)
        for n in (1, 2, 3):
            ev, m = minimal_kernel(n, 1, 0.2)
            breaks = np.sort(m.positions[:, 0])
            mass = 0.0
            for a, b in zip(breaks[:-1], breaks[1:]):
                panels = np.linspace(a, b, 41)
                mid = (panels[:-1] + panels[1:]) / 2
                half = (panels[1:] - panels[:-1]) / 2
                xs = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
                ws = (half[:, None] * weights[None, :]).ravel()
                mass += float(ev(xs[:, None]) @ ws)
            assert abs(mass - 1.0) < 1e-6

    def test_fd_mass_matches_diracs(self):
        ev, m = minimal_kernel(2, 1, 0.2)
        h = 1e-3
        dx = h / 20.0
        for c, w in zip(m.positions[:, 0], m.magnitudes):
            xs = np.arange(c - 5 * h, c + 5 * h, dx)
            vals = (ev((xs + h)[:, None]) - 2 * ev(xs[:, None])
                    + ev((xs - h)[:, None])) / h ** 2
            mass = np.sum(vals) * dx
            assert abs(mass - w) / abs(w) < 0.01

    def test_continuous_matches_reconstruction(self):
        ev, m = minimal_kernel(2, 2, 0.3)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.35, 0.35, size=(256, 2))
        np.testing.assert_allclose(ev(pts), kernel_eval_batch(m, pts), atol=1e-10)


class TestMass:
    def test_box_mass(self):
        assert kernel_mass(box_mixture(0.5)) == pytest.approx(1.0, abs=1e-12)

    def test_tent_mass(self):
        assert kernel_mass(tent_mixture(0.25)) == pytest.approx(1.0, abs=1e-12)

    def test_transform_preserves_mass(self):
        m = tent_mixture(0.25)
        mt = transform_kernel(m, TransformSpec(np.array([3.0]), np.array([0.2])))
        assert kernel_mass(mt) == pytest.approx(1.0, abs=1e-10)


class TestSerialization:
    def test_dict_round_trip(self):
        m = fit_kernel(TargetKernel("box", 0.5, 1), 1,
                       FitConfig(budget=2, iterations=200, batch_size=256, seed=0))
        doc = mixture_to_dict(m)
        back = mixture_from_dict(doc)
        np.testing.assert_array_equal(back.positions, m.positions)
        np.testing.assert_array_equal(back.magnitudes, m.magnitudes)
        assert back.meta["mse"] == m.meta["mse"]
