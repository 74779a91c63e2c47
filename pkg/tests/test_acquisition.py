import math

import numpy as np
import pytest

from gpbo import gp
from gpbo.acquisition import (
    AcquisitionSpec,
    CovarianceConditionedModel,
    DISTINCT_TOL,
    expected_improvement,
    maximize_ei,
    maximize_ucb,
    select_batch_qei,
    select_batch_thompson,
    select_batch_ucb_pe,
    thompson_select,
    ucb_acquisition,
    ucb_beta_schedule,
)
from gpbo.direct import DirectBudget
from gpbo.errors import DomainError
from gpbo.gp import Dataset, MaternHyperparams
from gpbo.search_space import SearchSpace


class _FixedPosterior:
    """Stub predictor pinning (mean, var) for closed-form acquisition checks."""

    def __init__(self, mean, var):
        self.mean_value = mean
        self.var_value = var

    def predict(self, X, include_noise=False):
        n = np.atleast_2d(X).shape[0]
        return np.full(n, self.mean_value), np.full(n, self.var_value)


def small_model(rng=None, n=6, d=1, noise=0.05):
    rng = rng or np.random.default_rng(0)
    X = rng.random((n, d))
    f = rng.normal(size=n)
    hyper = MaternHyperparams(noise_var=noise, amplitude=1.0, length_scale=0.3, mean=0.0)
    return gp.fit(Dataset(X, f), hyper)


def mc_expected_improvement(mu, sigma, y_best, draws, rng):
    y = mu + sigma * rng.standard_normal(draws)
    improvement = np.maximum(y_best - y, 0.0)
    return improvement.mean(), improvement.std() / math.sqrt(draws)


class TestExpectedImprovement:
    def test_zero_when_no_improvement_possible(self):
        model = _FixedPosterior(mean=1.0, var=0.0)
        assert expected_improvement(model, np.array([0.5]), y_best=1.0) == 0.0

    def test_certain_unit_improvement(self):
        model = _FixedPosterior(mean=0.0, var=0.0)
        assert expected_improvement(model, np.array([0.5]), y_best=1.0) == pytest.approx(1.0)

    def test_closed_form_at_zero_z(self):
        model = _FixedPosterior(mean=2.0, var=1.0)
        assert expected_improvement(model, np.array([0.5]), y_best=2.0) == pytest.approx(
            1.0 / math.sqrt(2.0 * math.pi), rel=1e-12
        )

    def test_matches_monte_carlo_oracle(self):
        # Triples are kept off the far tail (z >= -3.5) where a finite-draw
        # oracle has no power; the sd = 0 limits are covered above.
        rng = np.random.default_rng(42)
        z = np.random.default_rng(7).standard_normal(200_000)
        checked = 0
        while checked < 100:
            mu = float(rng.normal(0, 2))
            sigma = float(rng.uniform(0.05, 3.0))
            y_best = float(rng.normal(0, 2))
            if (y_best - mu) / sigma < -3.5:
                continue
            checked += 1
            model = _FixedPosterior(mean=mu, var=sigma**2)
            closed = expected_improvement(model, np.array([0.5]), y_best)
            improvement = np.maximum(y_best - (mu + sigma * z), 0.0)
            mc, se = improvement.mean(), improvement.std() / math.sqrt(z.size)
            assert abs(closed - mc) <= 3.0 * se + 1e-9

    def test_nonnegative_everywhere(self):
        model = small_model()
        mesh = np.linspace(0, 1, 200)[:, None]
        values = expected_improvement(model, mesh, y_best=float(model.data.f.min()))
        assert np.all(values >= 0.0)


class TestUcb:
    def test_simple_value(self):
        model = _FixedPosterior(mean=0.0, var=1.0)
        assert ucb_acquisition(model, np.array([0.5]), beta=2.0) == pytest.approx(2.0)

    def test_pure_exploitation_at_zero_sd(self):
        model = _FixedPosterior(mean=1.5, var=0.0)
        assert ucb_acquisition(model, np.array([0.5]), beta=2.0) == pytest.approx(-1.5)

    def test_monotone_in_sd(self):
        values = [
            ucb_acquisition(_FixedPosterior(0.0, var), np.array([0.5]), beta=1.5)
            for var in (0.1, 0.5, 1.0, 2.0)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_beta_validation_and_schedule(self):
        with pytest.raises(DomainError):
            ucb_acquisition(_FixedPosterior(0.0, 1.0), np.array([0.5]), beta=0.0)
        assert ucb_beta_schedule(2, 3) > ucb_beta_schedule(1, 3)


class TestThompson:
    def test_concentrates_on_dominant_point(self):
        # One noiseless observation far below the prior mean: draws leave
        # essentially no probability of any other grid point winning.
        hyper = MaternHyperparams(noise_var=0.0, amplitude=1.0, length_scale=0.05, mean=0.0)
        x0 = np.array([[0.5]])
        model = gp.fit(Dataset(x0, np.array([-12.0])), hyper)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        grid = np.vstack([np.linspace(0, 1, 50)[:, None], x0])
        rng = np.random.default_rng(3)
        hits = sum(
            np.allclose(thompson_select(model, space, rng, candidates=grid), x0[0])
            for _ in range(200)
        )
        assert hits >= 180

    def test_deterministic_given_seed(self):
        model = small_model()
        space = SearchSpace(lower=[0.0], upper=[1.0])
        a = thompson_select(model, space, np.random.default_rng(11), grid_size=100)
        b = thompson_select(model, space, np.random.default_rng(11), grid_size=100)
        np.testing.assert_array_equal(a, b)

    def test_returned_point_in_grid_and_bounds(self):
        model = small_model()
        space = SearchSpace(lower=[0.0], upper=[1.0])
        grid = np.random.default_rng(5).random((64, 1))
        pick = thompson_select(model, space, np.random.default_rng(2), candidates=grid)
        assert any(np.array_equal(pick, row) for row in grid)
        assert 0.0 <= pick[0] <= 1.0

    def test_multi_draw_matches_serial_path(self):
        model = small_model()
        space = SearchSpace(lower=[0.0], upper=[1.0])
        single = thompson_select(model, space, np.random.default_rng(9), grid_size=128)
        batch = select_batch_thompson(model, space, 1, np.random.default_rng(9), grid_size=128)
        np.testing.assert_array_equal(single, batch[0])

    def test_multi_draw_concentrates_in_main_basin(self):
        # Contrived unimodal posterior: deep noiseless observation at 0.3.
        hyper = MaternHyperparams(noise_var=0.0, amplitude=1.0, length_scale=0.15, mean=0.0)
        X = np.array([[0.3], [0.8]])
        model = gp.fit(Dataset(X, np.array([-8.0, 2.0])), hyper)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        picks = select_batch_thompson(model, space, 50, np.random.default_rng(123), grid_size=256)
        in_basin = np.mean(np.abs(picks[:, 0] - 0.3) < 0.2)
        assert in_basin >= 0.8

    def test_duplicates_allowed(self):
        hyper = MaternHyperparams(noise_var=0.0, amplitude=1.0, length_scale=0.05, mean=0.0)
        x0 = np.array([[0.5]])
        model = gp.fit(Dataset(x0, np.array([-12.0])), hyper)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        grid = np.vstack([np.linspace(0, 1, 20)[:, None], x0])
        picks = select_batch_thompson(model, space, 5, np.random.default_rng(1), candidates=grid)
        assert picks.shape == (5, 1)
        assert np.allclose(picks, 0.5)


class TestUcbPeBatch:
    def test_q1_bit_identical_to_serial(self):
        model = small_model(np.random.default_rng(8), n=8)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        budget = DirectBudget(max_evals=300)
        batch = select_batch_ucb_pe(model, space, 1, beta=2.0, budget=budget)
        serial = maximize_ucb(model, 1, beta=2.0, budget=budget)
        np.testing.assert_array_equal(batch[0], serial.x)

    def test_conditioning_collapses_variance_at_selection(self):
        hyper = MaternHyperparams(noise_var=0.0, amplitude=1.0, length_scale=0.2, mean=0.0)
        model = gp.fit(Dataset(np.array([[0.1]]), np.array([0.0])), hyper)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        batch = select_batch_ucb_pe(model, space, 2, beta=2.0, budget=DirectBudget(max_evals=200))
        conditioned = CovarianceConditionedModel(model, batch[:1])
        _, var_at_first = conditioned.predict(batch[0])
        assert var_at_first <= model.jitter + 1e-10
        assert np.max(np.abs(batch[0] - batch[1])) >= DISTINCT_TOL

    def test_mean_surface_unchanged_by_conditioning(self):
        model = small_model(np.random.default_rng(10), n=10)
        conditioned = CovarianceConditionedModel(model, np.array([[0.42]]))
        mesh = np.linspace(0, 1, 64)[:, None]
        base_mean, base_var = model.predict(mesh)
        cond_mean, cond_var = conditioned.predict(mesh)
        np.testing.assert_array_equal(cond_mean, base_mean)
        assert np.all(cond_var <= base_var + 1e-12)

    def test_symmetric_basins_get_one_point_each(self):
        # Symmetric two-well posterior around 0.25 and 0.75.
        hyper = MaternHyperparams(noise_var=1e-6, amplitude=1.0, length_scale=0.1, mean=0.0)
        X = np.array([[0.25], [0.75], [0.5]])
        f = np.array([-1.0, -1.0, 1.0])
        model = gp.fit(Dataset(X, f), hyper)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        batch = select_batch_ucb_pe(model, space, 2, beta=2.0, budget=DirectBudget(max_evals=400))
        sides = sorted(batch[:, 0])
        assert sides[0] < 0.5 < sides[1]

    def test_batches_distinct_and_in_bounds(self):
        rng = np.random.default_rng(3)
        space = SearchSpace(lower=[0.0, 0.0], upper=[1.0, 1.0])
        for _ in range(5):
            model = small_model(rng, n=7, d=2)
            batch = select_batch_ucb_pe(model, space, 3, beta=2.0, budget=DirectBudget(max_evals=200))
            assert batch.shape == (3, 2)
            assert np.all(batch >= 0) and np.all(batch <= 1)
            for i in range(3):
                for j in range(i + 1, 3):
                    assert np.max(np.abs(batch[i] - batch[j])) >= DISTINCT_TOL


class TestQeiBatch:
    def test_q1_bit_identical_to_serial(self):
        model = small_model(np.random.default_rng(12), n=8)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        budget = DirectBudget(max_evals=300)
        y_best = float(model.data.f.min())
        batch = select_batch_qei(model, space, 1, y_best, budget=budget)
        serial = maximize_ei(model, 1, y_best, budget=budget)
        np.testing.assert_array_equal(batch[0], serial.x)

    def test_batches_distinct_and_in_bounds_on_random_instances(self):
        rng = np.random.default_rng(99)
        space = SearchSpace(lower=[0.0, 0.0], upper=[1.0, 1.0])
        for _ in range(20):
            model = small_model(rng, n=6, d=2)
            y_best = float(model.data.f.min())
            batch = select_batch_qei(model, space, 3, y_best, budget=DirectBudget(max_evals=150))
            assert batch.shape == (3, 2)
            assert np.all(batch >= 0) and np.all(batch <= 1)
            for i in range(3):
                for j in range(i + 1, 3):
                    assert np.max(np.abs(batch[i] - batch[j])) >= DISTINCT_TOL

    def test_greedy_batch_beats_random_batch_joint_ei(self):
        # Joint batch EI estimated by Monte Carlo over the q-point joint
        # posterior; common draws for both batches.
        rng = np.random.default_rng(2718)
        space = SearchSpace(lower=[0.0], upper=[1.0])
        draws = 100_000
        wins = 0
        for trial in range(10):
            model = small_model(np.random.default_rng(500 + trial), n=7)
            y_best = float(model.data.f.min())
            greedy = select_batch_qei(model, space, 3, y_best, budget=DirectBudget(max_evals=200))
            random_batch = np.random.default_rng(trial).random((3, 1))
            z = np.random.default_rng(9000 + trial).standard_normal((draws, 3))

            def joint_ei(batch):
                mean, cov = model.joint_posterior(batch)
                L = np.linalg.cholesky(cov + 1e-10 * np.eye(3))
                samples = mean + z @ L.T
                return np.maximum(y_best - samples.min(axis=1), 0.0).mean()

            if joint_ei(greedy) >= joint_ei(random_batch):
                wins += 1
        assert wins == 10


def test_spec_validation():
    with pytest.raises(DomainError):
        AcquisitionSpec(family="entropy")
    with pytest.raises(DomainError):
        AcquisitionSpec(family="ei", batch_size=0)
    with pytest.raises(DomainError):
        AcquisitionSpec(family="ucb", ucb_beta=-1.0)
    spec = AcquisitionSpec(family="ucb", ucb_beta="schedule")
    assert spec.beta_at(3, 2) == pytest.approx(ucb_beta_schedule(3, 2))
    assert AcquisitionSpec(family="ts").grid_size(2) == 2000
