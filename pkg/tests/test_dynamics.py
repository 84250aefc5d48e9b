import math
from dataclasses import replace

import icontract
import numpy as np
import pytest

from src import gridref
from src.dynamics import (
    ALGORITHMS,
    Ensemble,
    Initializer,
    NoiseStream,
    ParticleNoise,
    RunConfig,
    UpdateCounter,
    collect_snapshots,
    initialize,
    inner_equilibrate,
    lgda_step,
    noise_coefficient,
    outer_step,
    run_lgda,
    run_qslgd,
)
from src.errors import NumericalBlowUp
from src.gridref import GridKernel
from src.kernel import PolynomialSphereKernel, SineTorusKernel
from src.manifold import ManifoldSpec
from src.metrics import kl_to_reference, ni_error, sampling_floor

CIRCLE = ManifoldSpec.torus(1)
QUARTER_BOX = Initializer("box", (0.0,), (0.25,))


def _small_config(**overrides):
    values = dict(n_x=50, n_y=40, k0=10, k1=3, k2=2, T=7, h_x=0.01, h_y=0.01, beta=10.0, seed=3)
    values.update(overrides)
    return RunConfig(**values)


class _ExplodingKernel(SineTorusKernel):

    def mean_grad_y(self, x, y):
        return np.full(y.shape, np.nan)


class TestNoise:

    def test_noise_coefficient(self):
        assert noise_coefficient(4.0) == 0.5
        assert noise_coefficient(math.inf) == 0.0

    def test_blocks_depend_only_on_the_update_index(self):
        first = NoiseStream(5, 0)
        second = NoiseStream(5, 0)
        first.next_block(10, 2)
        np.testing.assert_array_equal(first.next_block(10, 2), second.generator(1).standard_normal((10, 2)))

    def test_roles_and_seeds_are_independent_streams(self):
        base = NoiseStream(5, 0).next_block(100, 1)
        assert not np.allclose(base, NoiseStream(5, 1).next_block(100, 1))
        assert not np.allclose(base, NoiseStream(6, 0).next_block(100, 1))

    def test_rows_are_prefix_stable(self):
        # particle i draws the same increment whatever the ensemble size
        large = NoiseStream(1, 0).next_block(100, 3)
        small = NoiseStream(1, 0).next_block(10, 3)
        np.testing.assert_array_equal(large[:10], small)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            NoiseStream(-1, 0)


class TestEnsemble:

    def test_points_round_trip(self):
        e = Ensemble(np.array([[0.1], [0.7]]), CIRCLE)
        assert len(e) == 2
        np.testing.assert_array_equal(Ensemble.from_points(e.points).coords, e.coords)

    def test_off_manifold_particles_are_rejected(self):
        with pytest.raises(icontract.ViolationError):
            Ensemble(np.array([[1.5]]), CIRCLE)

    def test_box_initialisation(self):
        X, Y = initialize(RunConfig(n_x=500, n_y=300, init_x=QUARTER_BOX), CIRCLE)
        assert len(X) == 500 and len(Y) == 300
        assert np.all(X.coords < 0.25)
        assert np.any(Y.coords > 0.25)


class TestSingleUpdates:

    def test_lgda_moves_x_down_and_y_up_the_gradient(self):
        k = SineTorusKernel()
        X = Ensemble(np.array([[0.2]]), CIRCLE)
        Y = Ensemble(np.array([[0.2]]), CIRCLE)
        new_x, new_y = lgda_step(X, Y, k, 0.01, math.inf, ParticleNoise(0))
        assert new_x.coords[0, 0] < 0.2
        assert new_y.coords[0, 0] > 0.2
        np.testing.assert_allclose(new_x.coords, X.coords - 0.01 * k.mean_grad_x(X.coords, Y.coords))

    def test_lgda_uses_separate_step_sizes(self):
        k = SineTorusKernel()
        X = Ensemble(np.array([[0.2]]), CIRCLE)
        Y = Ensemble(np.array([[0.2]]), CIRCLE)
        _, y_small = lgda_step(X, Y, k, 0.01, math.inf, ParticleNoise(0), h_y=0.001)
        _, y_large = lgda_step(X, Y, k, 0.01, math.inf, ParticleNoise(0))
        assert y_small.coords[0, 0] - 0.2 == pytest.approx((y_large.coords[0, 0] - 0.2) / 10)

    def test_inner_equilibrate_leaves_x_alone_and_counts(self):
        k = SineTorusKernel()
        X, Y = initialize(_small_config(), CIRCLE)
        before = X.coords.copy()
        counter = UpdateCounter()
        inner_equilibrate(X, Y, 5, k, 0.01, 10.0, ParticleNoise(0), counter)
        np.testing.assert_array_equal(X.coords, before)
        assert counter.inner == 5

    def test_snapshot_buffer_layout(self):
        k = SineTorusKernel()
        X, Y = initialize(_small_config(), CIRCLE)
        rng = ParticleNoise(4)
        final, buf = collect_snapshots(X, Y, 3, k, 0.01, 10.0, rng)
        assert len(buf) == 3 * len(Y)
        np.testing.assert_array_equal(buf.coords[2 * len(Y):], final.coords)

        replay = ParticleNoise(4)
        step_one = inner_equilibrate(X, Y, 1, k, 0.01, 10.0, replay)
        np.testing.assert_array_equal(buf.coords[:len(Y)], step_one.coords)

    def test_outer_step_descends_against_the_snapshot_measure(self):
        k = SineTorusKernel()
        X = Ensemble(np.array([[0.1], [0.6]]), CIRCLE)
        X0, Y = initialize(_small_config(), CIRCLE)
        _, buf = collect_snapshots(X0, Y, 2, k, 0.01, 10.0, ParticleNoise(1))
        new_x = outer_step(X, buf, k, 0.05, math.inf, ParticleNoise(2))
        expected = np.mod(X.coords - 0.05 * k.mean_grad_x(X.coords, buf.coords), 1.0)
        np.testing.assert_allclose(new_x.coords, expected)


class TestRuns:

    def test_qslgd_update_counts(self):
        cfg = _small_config()
        counter = UpdateCounter()
        run_qslgd(cfg, SineTorusKernel(), counter=counter)
        assert counter.inner == cfg.k0 + cfg.T * (cfg.k1 + cfg.k2)
        assert counter.outer == cfg.T

    def test_observer_is_called_at_zero_and_after_every_outer_iteration(self):
        seen = []
        run_qslgd(_small_config(), SineTorusKernel(), observer=lambda t, X, Y: seen.append(t))
        assert seen == list(range(8))

    def test_lgda_counts(self):
        cfg = _small_config(k2=0)
        counter = UpdateCounter()
        seen = []
        run_lgda(cfg, SineTorusKernel(), observer=lambda t, X, Y: seen.append(t), counter=counter)
        assert counter.lgda == cfg.T
        assert seen == list(range(cfg.T + 1))

    def test_qslgd_needs_a_snapshot(self):
        with pytest.raises(icontract.ViolationError):
            run_qslgd(_small_config(k2=0), SineTorusKernel())

    @pytest.mark.parametrize("algorithm", sorted(ALGORITHMS))
    def test_runs_are_deterministic(self, algorithm):
        cfg = _small_config(init_x=QUARTER_BOX)
        first = ALGORITHMS[algorithm](cfg, SineTorusKernel())
        second = ALGORITHMS[algorithm](cfg, SineTorusKernel())
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.coords, b.coords)

    def test_seeds_change_the_trajectory(self):
        X1, _ = run_qslgd(_small_config(seed=1), SineTorusKernel())
        X2, _ = run_qslgd(_small_config(seed=2), SineTorusKernel())
        assert not np.array_equal(X1.coords, X2.coords)

    def test_sphere_run_stays_on_the_sphere(self):
        k = PolynomialSphereKernel.gaussian(3, matrix_seed=0)
        X, Y = run_qslgd(_small_config(beta=100.0), k)
        np.testing.assert_allclose(np.linalg.norm(X.coords, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(Y.coords, axis=1), 1.0, atol=1e-12)

    def test_blow_up_is_labelled_with_phase_and_iteration(self):
        with pytest.raises(NumericalBlowUp) as info:
            run_qslgd(_small_config(), _ExplodingKernel())
        assert info.value.phase == "warm-up"
        assert info.value.iteration == 0

    def test_blow_up_in_the_inner_loop(self):
        with pytest.raises(NumericalBlowUp) as info:
            run_qslgd(_small_config(k0=0), _ExplodingKernel())
        assert info.value.phase == "inner"
        assert info.value.iteration == 1

    def test_blow_up_in_lgda(self):
        with pytest.raises(NumericalBlowUp) as info:
            run_lgda(_small_config(), _ExplodingKernel())
        assert info.value.phase == "lgda"
        assert info.value.iteration == 1

    def test_short_qslgd_run_spreads_a_concentrated_start(self):
        cfg = RunConfig(n_x=200, n_y=200, k0=100, k1=5, k2=1, T=2000, beta=10.0, seed=0,
                        init_x=QUARTER_BOX, init_y=QUARTER_BOX)
        X0, _ = initialize(cfg, CIRCLE)
        X, _ = run_qslgd(cfg, SineTorusKernel())
        assert kl_to_reference(X0) > 0.8
        assert kl_to_reference(X) < 0.2


@pytest.mark.slow
def test_qslgd_equilibrates_to_the_sampling_floor():
    cfg = RunConfig(n_x=1000, n_y=1000, k0=1000, k1=5, k2=1, T=30000, h_x=0.01, h_y=0.01, beta=100.0,
                    init_x=QUARTER_BOX, init_y=QUARTER_BOX)
    kls = []
    for seed in range(5):
        X, _ = run_qslgd(replace(cfg, seed=seed), SineTorusKernel())
        kls.append(kl_to_reference(X))
    assert np.mean(kls) <= 3.0 * sampling_floor(1000)


class TestInnerEquilibrium:

    def test_zero_kernel_diffuses_to_uniform(self):
        X = Ensemble(np.full((10, 1), 0.3), CIRCLE)
        Y = Ensemble(np.full((10_000, 1), 0.1), CIRCLE)
        Y = inner_equilibrate(X, Y, 500, SineTorusKernel(scale=0.0), 0.01, 1.0, ParticleNoise(0))
        assert kl_to_reference(Y) < 0.02

    def test_response_to_a_uniform_opponent_matches_the_grid_oracle(self):
        cfg = RunConfig(n_x=10_000, n_y=2000, beta=10.0, seed=5, init_y=QUARTER_BOX)
        X, Y = initialize(cfg, CIRCLE)
        k = SineTorusKernel()
        Y = inner_equilibrate(X, Y, 2000, k, 0.01, cfg.beta, ParticleNoise(cfg.seed))
        reference = gridref.gibbs_response(gridref.uniform(256), GridKernel.from_kernel(k, 256), cfg.beta)
        assert kl_to_reference(Y, reference=reference) < 0.05


def _mean_final_kl(algorithm, cfg, seeds):
    return float(np.mean([kl_to_reference(ALGORITHMS[algorithm](replace(cfg, seed=seed), SineTorusKernel())[0])
                          for seed in seeds]))


@pytest.mark.slow
def test_quasistatic_run_beats_simultaneous_updates_at_large_beta():
    lgda = RunConfig(n_x=1000, n_y=1000, k0=1000, k1=1, k2=1, T=300_000, init_x=QUARTER_BOX, init_y=QUARTER_BOX)
    qslgd = replace(lgda, k1=10, T=30_000)
    seeds = range(5)
    lgda_low = _mean_final_kl("lgda", replace(lgda, beta=1.0), seeds)
    lgda_high = _mean_final_kl("lgda", replace(lgda, beta=1000.0), seeds)
    assert lgda_high > 2.0 * lgda_low
    assert _mean_final_kl("qslgd", replace(qslgd, beta=1000.0), seeds) <= 0.5 * lgda_high


@pytest.mark.slow
def test_quasistatic_run_reduces_the_ni_error_on_sphere_games():
    ratios = []
    for seed in range(10):
        k = PolynomialSphereKernel.gaussian(3, matrix_seed=seed)
        cfg = RunConfig(n_x=500, n_y=500, k0=1000, k1=5, k2=1, T=5000, beta=1000.0, seed=seed)
        X0, Y0 = initialize(cfg, k.manifold)
        X, Y = run_qslgd(cfg, k)
        ratios.append(ni_error(X, Y, k).ni_value / ni_error(X0, Y0, k).ni_value)
    assert max(ratios) < 1.0
    assert np.mean(ratios) < 0.25
