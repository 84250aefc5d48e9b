import math

import numpy as np
import pytest
import sympy

from src import gridref
from src.dynamics import Ensemble
from src.errors import BoundUndefined, ManifoldMismatch
from src.gridref import GridDensity, GridKernel
from src.kernel import PolynomialSphereKernel, SineTorusKernel
from src.manifold import ManifoldSpec, sample_coords
from src.metrics import (
    NIEstimatorOptions,
    beta_threshold,
    free_energy_from_ensemble,
    histogram,
    is_eps_nash,
    kl_to_reference,
    ni_error,
    payoff_against_x,
    payoff_against_y,
    sampling_floor,
    theorem_threshold,
)

CIRCLE = ManifoldSpec.torus(1)
S2 = ManifoldSpec.sphere(3)


def _circle(values):
    return Ensemble(np.asarray(values, dtype=float).reshape(-1, 1), CIRCLE)


def _bin_centres(per_bin, bins=10):
    return _circle(np.repeat((np.arange(bins) + 0.5) / bins, per_bin))


class TestHistogram:

    def test_counts(self):
        h = histogram(_circle([0.05, 0.15, 0.17, 0.99]), bins=10)
        np.testing.assert_array_equal(h.counts, [1, 2, 0, 0, 0, 0, 0, 0, 0, 1])
        assert h.total == 4
        np.testing.assert_allclose(h.edges, np.linspace(0, 1, 11))

    def test_sphere_is_rejected(self):
        e = Ensemble(np.array([[0.0, 0.0, 1.0]]), S2)
        with pytest.raises(ManifoldMismatch):
            histogram(e)


class TestKL:

    def test_matching_histogram_has_zero_divergence(self):
        assert kl_to_reference(_bin_centres(10)) == 0.0

    def test_single_bin(self):
        assert kl_to_reference(_circle([0.31] * 1000)) == pytest.approx(math.log(10))

    def test_grid_reference(self):
        reference = GridDensity(np.array([2.0] * 5 + [0.0] * 5))
        assert kl_to_reference(_circle(np.repeat([0.05, 0.15, 0.25, 0.35, 0.45], 10)),
                               reference=reference) == pytest.approx(0.0, abs=1e-12)
        assert kl_to_reference(_circle([0.05] * 10), reference=reference) == pytest.approx(math.log(5))

    def test_empty_reference_bin_gives_infinity(self):
        reference = GridDensity(np.array([2.0] * 5 + [0.0] * 5))
        assert math.isinf(kl_to_reference(_circle([0.1, 0.75]), reference=reference))

    def test_uniform_grid_reference_matches_exact_bin_mass(self):
        e = _circle(np.random.default_rng(0).random(500))
        assert kl_to_reference(e, reference=gridref.uniform(100)) == pytest.approx(kl_to_reference(e), abs=1e-12)

    def test_sampling_floor(self):
        floor = sampling_floor(1000, 10, trials=1000, rng=np.random.default_rng(1))
        assert 0.0045 / 2 <= floor <= 0.0045 * 2


class TestNI:

    def test_point_masses(self):
        e = _circle([0.25])
        report = ni_error(e, e, SineTorusKernel())
        assert report.ni_value == pytest.approx(2.0)
        assert report.argmax_y.coords[0] == pytest.approx(0.25)
        assert report.argmin_x.coords[0] == pytest.approx(0.75)
        assert not report.is_lower_bound

    def test_uniform_samples(self):
        rng = np.random.default_rng(2)
        X, Y = _circle(rng.random(10_000)), _circle(rng.random(10_000))
        assert abs(ni_error(X, Y, SineTorusKernel()).ni_value) < 0.05

    def test_relabelling_invariance(self):
        rng = np.random.default_rng(3)
        X, Y = _circle(rng.random(300)), _circle(rng.random(200))
        k = SineTorusKernel()
        permuted = _circle(X.coords[rng.permutation(300), 0])
        assert ni_error(permuted, Y, k).ni_value == pytest.approx(ni_error(X, Y, k).ni_value, abs=1e-12)

    def test_grid_shift_invariance(self):
        rng = np.random.default_rng(4)
        X, Y = _circle(rng.random(100)), _circle(rng.random(100))
        k = SineTorusKernel()
        grid = (np.arange(4096) + 0.37) / 4096
        shifted = payoff_against_x(k, X, grid[:, None]).max() - payoff_against_y(k, Y, grid[:, None]).min()
        assert ni_error(X, Y, k).ni_value == pytest.approx(shifted, abs=1e-3)

    def test_zero_kernel_on_the_sphere(self):
        k = PolynomialSphereKernel([np.zeros((3, 3))] * 4)
        rng = np.random.default_rng(5)
        X, Y = Ensemble(sample_coords(S2, 20, rng), S2), Ensemble(sample_coords(S2, 20, rng), S2)
        report = ni_error(X, Y, k, NIEstimatorOptions(starts=4, steps=20))
        assert report.ni_value == 0.0
        assert report.is_lower_bound

    def test_sphere_estimate_is_a_lower_bound(self):
        k = PolynomialSphereKernel.gaussian(3, matrix_seed=1)
        rng = np.random.default_rng(6)
        X, Y = Ensemble(sample_coords(S2, 50, rng), S2), Ensemble(sample_coords(S2, 50, rng), S2)
        report = ni_error(X, Y, k)
        dense = sample_coords(S2, 10 ** 6, np.random.default_rng(7))
        dense_sup = payoff_against_x(k, X, dense).max()
        dense_inf = payoff_against_y(k, Y, dense).min()
        assert report.sup_value <= dense_sup + 1e-2
        assert report.inf_value >= dense_inf - 1e-2
        # the multi-start search should also find the optimum the dense search sees
        assert report.sup_value >= dense_sup - 1e-2
        assert report.inf_value <= dense_inf + 1e-2
        assert report.max_agreement >= 3 and report.min_agreement >= 3

    def test_is_eps_nash(self):
        e = _circle([0.25])
        report = ni_error(e, e, SineTorusKernel())
        assert is_eps_nash(report, 2.5)
        assert not is_eps_nash(report, 1.0)


class TestBetaThreshold:

    def test_sine_plug_in(self):
        k = SineTorusKernel()
        lip = k.constants().lipschitz
        v = 2 * (0.25 / lip)
        assert beta_threshold(k, CIRCLE, 0.5) == pytest.approx(8 * math.log(2 * (1 - v) / v * 7), rel=1e-12)

    def test_monotone_in_eps(self):
        k = SineTorusKernel()
        thresholds = [beta_threshold(k, CIRCLE, eps) for eps in np.linspace(0.1, 1.0, 10)]
        assert np.all(np.diff(thresholds) <= 0)

    def test_larger_kernel_needs_larger_beta(self):
        assert beta_threshold(SineTorusKernel(2.0), CIRCLE, 0.5) > beta_threshold(SineTorusKernel(1.0), CIRCLE, 0.5)

    def test_matches_the_symbolic_formula(self):
        c, v, eps = sympy.symbols("C_K V_delta epsilon", positive=True)
        formula = sympy.lambdify((c, v, eps), 4 / eps * sympy.log(2 * (1 - v) / v * (4 * c / eps - 1)), "mpmath")
        rng = np.random.default_rng(8)
        for _ in range(20):
            scale = float(rng.uniform(0.5, 3.0))
            eps = float(rng.uniform(0.05, 1.0)) * scale
            k = SineTorusKernel(scale)
            delta = eps / (2 * k.constants().lipschitz)
            expected = float(formula(scale, 2 * delta, eps))
            assert beta_threshold(k, CIRCLE, eps) == pytest.approx(expected, rel=1e-12)

    def test_sphere_threshold(self):
        k = PolynomialSphereKernel.gaussian(3, matrix_seed=0)
        eps = k.constants().bound
        assert beta_threshold(k, S2, eps) > 0

    @pytest.mark.parametrize("eps", [0.0, 4.0, 5.0, -1.0])
    def test_out_of_range_eps(self, eps):
        with pytest.raises(BoundUndefined, match="bound undefined"):
            beta_threshold(SineTorusKernel(), CIRCLE, eps)

    def test_scalar_formula(self):
        assert theorem_threshold(1.0, 0.1, 1.0) == pytest.approx(4 * math.log(2 * 0.9 / 0.1 * 3))


def test_free_energy_of_an_evenly_spread_ensemble():
    K = GridKernel.from_kernel(SineTorusKernel(), 64)
    e = _circle((np.arange(64 * 5) + 0.5) / (64 * 5))
    assert free_energy_from_ensemble(e, K, 10.0) == pytest.approx(0.0, abs=1e-12)
