import math
import sys

import numpy as np
import pytest

from gpbo.errors import DomainError
from gpbo.objectives import (
    SYNTHETIC_TTK_CAP,
    SubprocessObjective,
    ackley,
    forrester,
    make_objective,
    synthetic_ttk,
    synthetic_ttk_backbone,
    synthetic_ttk_mesh_minimizer,
    ttk_encode,
)


class TestAckley:
    def test_zero_at_origin(self):
        assert ackley(np.zeros(3)) == pytest.approx(0.0, abs=1e-12)

    def test_noise_variance_statistical(self):
        rng = np.random.default_rng(5)
        x = np.array([1.0, -2.0, 3.0])
        draws = np.array([ackley(x, noise_var=25.0, rng=rng) for _ in range(10_000)])
        assert draws.var() == pytest.approx(25.0, rel=0.1)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.uniform(-30, 30, size=3)
            assert ackley(x) == pytest.approx(ackley(-x), rel=1e-12)

    def test_nonnegative_and_zero_only_at_origin(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-32.768, 32.768, size=(20_000, 3))
        values = np.array([ackley(p) for p in pts])
        assert np.all(values >= 0.0)
        assert np.all(values[np.linalg.norm(pts, axis=1) > 1e-3] > 0.0)


class TestForrester:
    def test_root_of_squared_factor(self):
        assert forrester(1.0 / 3.0) == pytest.approx(0.0, abs=1e-12)

    def test_value_at_zero(self):
        assert forrester(0.0) == pytest.approx(4.0 * math.sin(-4.0), rel=1e-12)
        assert forrester(0.0) == pytest.approx(3.0272, abs=1e-4)

    def test_global_minimum_by_mesh_oracle(self):
        xs = np.linspace(0.0, 1.0, 1_000_001)
        values = (6.0 * xs - 2.0) ** 2 * np.sin(12.0 * xs - 4.0)
        arg = int(np.argmin(values))
        assert xs[arg] == pytest.approx(0.7572, abs=1e-3)
        assert values[arg] == pytest.approx(-6.0207, abs=1e-3)

    def test_domain_enforced(self):
        with pytest.raises(DomainError):
            forrester(1.5)


class TestTtkEncode:
    def test_survivor_keeps_sim_time(self):
        assert ttk_encode(True, 23.4, 300.0) == 23.4

    def test_eliminated_reflects_time(self):
        assert ttk_encode(False, 196.05, 300.0) == 403.95

    def test_cap_when_both_survive(self):
        assert ttk_encode(True, 300.0, 300.0) == 300.0

    def test_range_validation(self):
        with pytest.raises(DomainError):
            ttk_encode(True, 301.0, 300.0)
        with pytest.raises(DomainError):
            ttk_encode(False, -1.0, 300.0)

    def test_branches_meet_only_at_t_max(self):
        # Survival maps onto [0, t_max], elimination onto [t_max, 2*t_max];
        # they meet exactly at sim_time = t_max.
        times = np.linspace(0.0, 300.0, 1001)
        survived = np.array([ttk_encode(True, t, 300.0) for t in times])
        eliminated = np.array([ttk_encode(False, t, 300.0) for t in times])
        assert survived.min() == 0.0 and survived.max() == 300.0
        assert eliminated.min() == 300.0 and eliminated.max() == 600.0
        overlap = np.intersect1d(survived, eliminated)
        np.testing.assert_array_equal(overlap, [300.0])
        # strictly monotone branches -> bijection onto the union
        assert np.all(np.diff(survived) > 0)
        assert np.all(np.diff(eliminated) < 0)


class TestSyntheticTtk:
    def test_output_clamped(self):
        rng = np.random.default_rng(12)
        for _ in range(10_000):
            launch = rng.uniform(0, 5)
            intspeed = rng.uniform(0, 500)
            value = synthetic_ttk(launch, intspeed, rng)
            assert 0.0 <= value <= SYNTHETIC_TTK_CAP

    def test_mesh_minimizer_in_low_speed_half(self):
        minimizer, value = synthetic_ttk_mesh_minimizer(resolution=1000)
        assert minimizer[1] < 250.0
        assert value < 100.0

    def test_high_speed_plateau_near_cap(self):
        plateau = float(synthetic_ttk_backbone(2.5, 490.0))
        assert plateau > 500.0

    def test_repeated_evaluations_vary(self):
        rng = np.random.default_rng(3)
        values = {synthetic_ttk(2.6, 125.0, rng) for _ in range(10)}
        assert len(values) > 1

    def test_domain_enforced(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DomainError):
            synthetic_ttk(6.0, 100.0, rng)
        with pytest.raises(DomainError):
            synthetic_ttk(1.0, 600.0, rng)


class TestDeterminism:
    def test_same_stream_same_value(self):
        for name, kwargs in (("ackley3", {"noise_var": 25.0}), ("synthetic_ttk", {}), ("forrester", {"noise_var": 1.0})):
            objective = make_objective(name, **kwargs)
            x = objective.space.from_unit(np.full(objective.dims, 0.37))
            a = objective(x, np.random.default_rng(123))
            b = objective(x, np.random.default_rng(123))
            assert a == b


class TestRegistry:
    def test_named_objectives_exist(self):
        assert make_objective("ackley3", noise_var=25.0).dims == 3
        assert make_objective("forrester").dims == 1
        assert make_objective("synthetic_ttk").dims == 2
        with pytest.raises(DomainError):
            make_objective("mystery")

    def test_ackley3_uses_benchmark_bounds(self):
        space = make_objective("ackley3").space
        np.testing.assert_allclose(space.lower, [-32.768, -12.21, -32.768])
        np.testing.assert_allclose(space.upper, [32.768, 32.768, 5.14])


class TestExternalProtocol:
    def test_subprocess_round_trip_matches_in_process(self):
        command = [sys.executable, "-m", "gpbo.serve_objective", "ackley", "--dims", "2"]
        with SubprocessObjective(command, dims=2) as client:
            x = np.array([0.5, -1.5])
            served = client.evaluate(x, np.random.default_rng(0))
            assert served == pytest.approx(ackley(x), rel=1e-12)

    def test_subprocess_noise_reproducible_by_stream(self):
        command = [sys.executable, "-m", "gpbo.serve_objective", "ackley", "--dims", "1", "--noise-var", "4.0"]
        with SubprocessObjective(command, dims=1) as client:
            x = np.array([1.0])
            a = client.evaluate(x, np.random.default_rng(77))
            b = client.evaluate(x, np.random.default_rng(77))
            c = client.evaluate(x, np.random.default_rng(78))
            assert a == b
            assert a != c
