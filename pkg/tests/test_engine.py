import numpy as np
import pytest

from gpbo.acquisition import AcquisitionSpec
from gpbo.direct import DirectBudget
from gpbo.engine import (
    IterationRecord,
    RunHistory,
    SamplingPlan,
    TerminationCriteria,
    check_termination,
    propose_points,
    run_gpbo,
    substream,
)
from gpbo.errors import DomainError
from gpbo.gp import Dataset, MaternHyperparams
from gpbo import gp
from gpbo.hyperlearn import Gaussian, HyperPriorSet, Uniform
from gpbo.search_space import SearchSpace

SPACE_1D = SearchSpace(lower=[0.0], upper=[1.0])
SPACE_2D = SearchSpace(lower=[0.0, 0.0], upper=[1.0, 1.0])


def quick_priors():
    return HyperPriorSet(
        noise_var=Uniform(np.log(1e-3), np.log(5.0)),
        amplitude=Uniform(np.log(1e-2), np.log(20.0)),
        length_scale=Uniform(np.log(0.02), np.log(3.0)),
        mean=Gaussian(0.0, 25.0),
    )


def bowl(x, rng):
    return float(np.sum((np.atleast_1d(x) - 0.3) ** 2) + rng.normal(0.0, 0.05))


def make_plan(repeats=1, batch=1, family="ucb"):
    return SamplingPlan(
        repeats=repeats,
        batch_size=batch,
        acquisition=AcquisitionSpec(family=family, batch_size=batch),
    )


def tiny_budget():
    return DirectBudget(max_evals=60)


def run_quick(repeats=1, batch=1, family="ucb", max_evals=24, seed=7, seed_design=6, objective=bowl, space=SPACE_1D):
    return run_gpbo(
        space=space,
        objective=objective,
        plan=make_plan(repeats, batch, family),
        seed_design_size=seed_design,
        priors=quick_priors(),
        termination=TerminationCriteria(max_evaluations=max_evals),
        seed=seed,
        map_restarts=2,
        initial_map_restarts=2,
        direct_budget=tiny_budget(),
    )


class TestAccounting:
    def test_hybrid_plan_consumes_repeats_times_batch_per_iteration(self):
        history = run_quick(repeats=10, batch=5, max_evals=106, seed_design=6, space=SPACE_2D)
        assert all(rec.values.size == 50 for rec in history.records)
        assert history.records[0].cumulative_evals == 56
        assert history.cumulative_evals == 106

    def test_single_plan_consumes_one_per_iteration(self):
        history = run_quick(repeats=1, batch=1, max_evals=10, seed_design=6)
        assert all(rec.values.size == 1 for rec in history.records)
        assert history.cumulative_evals == 10

    def test_exact_budget_arithmetic(self):
        # 20 seeds + 20 iterations of 3x3 = 200 evaluations on the nose.
        history = run_quick(repeats=3, batch=3, max_evals=200, seed_design=20, space=SPACE_2D)
        assert history.cumulative_evals == 200
        assert history.iterations == 20
        assert history.termination_reason == "max_evaluations"

    def test_overshoot_bounded_by_final_iteration(self):
        history = run_quick(repeats=3, batch=3, max_evals=20, seed_design=6, space=SPACE_2D)
        assert history.cumulative_evals <= 20 + 9 - 1

    def test_dataset_rows_equal_evaluation_count(self):
        history = run_quick(repeats=3, batch=2, max_evals=30, seed_design=6, space=SPACE_2D)
        data = history.dataset()
        assert data.n == history.cumulative_evals
        assert data.n == 6 + history.iterations * 6


class TestProposeDispatch:
    def _model(self, rng=None):
        rng = rng or np.random.default_rng(0)
        X = rng.random((8, 1))
        f = rng.normal(size=8)
        hyper = MaternHyperparams(noise_var=0.05, amplitude=1.0, length_scale=0.3)
        return gp.fit(Dataset(X, f), hyper)

    def test_repeat_plan_proposes_single_location(self):
        model = self._model()
        pts = propose_points(
            model, make_plan(repeats=3, batch=1, family="ucb"), SPACE_1D, 0.0,
            substream(1, "acq", 1), budget=tiny_budget(),
        )
        assert pts.shape == (1, 1)

    def test_batch_plan_proposes_distinct_locations(self):
        model = self._model()
        pts = propose_points(
            model, make_plan(repeats=1, batch=3, family="ucb"), SPACE_1D, 0.0,
            substream(1, "acq", 1), budget=tiny_budget(),
        )
        assert pts.shape == (3, 1)
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.max(np.abs(pts[i] - pts[j])) >= 1e-9

    def test_proposals_deterministic(self):
        model = self._model()
        a = propose_points(model, make_plan(), SPACE_1D, 0.0, substream(5, "acq", 1), budget=tiny_budget())
        b = propose_points(model, make_plan(), SPACE_1D, 0.0, substream(5, "acq", 1), budget=tiny_budget())
        np.testing.assert_array_equal(a, b)

    def test_thompson_dispatch(self):
        model = self._model()
        pts = propose_points(
            model,
            SamplingPlan(repeats=1, batch_size=2, acquisition=AcquisitionSpec(family="ts", batch_size=2, ts_grid_size=64)),
            SPACE_1D, 0.0, substream(2, "acq", 1),
        )
        assert pts.shape == (2, 1)

    def test_acquisition_seed_overrides_run_stream(self):
        def run(acq_seed):
            return run_gpbo(
                space=SPACE_1D,
                objective=bowl,
                plan=SamplingPlan(
                    acquisition=AcquisitionSpec(family="ts", ts_grid_size=64, seed=acq_seed)
                ),
                seed_design_size=4,
                priors=quick_priors(),
                termination=TerminationCriteria(max_evaluations=6),
                seed=31,
                map_restarts=2,
                initial_map_restarts=2,
                direct_budget=tiny_budget(),
            )

        base = run(None)
        pinned_a = run(12345)
        pinned_b = run(12345)
        np.testing.assert_array_equal(pinned_a.records[0].proposed, pinned_b.records[0].proposed)
        assert not np.array_equal(base.records[0].proposed, pinned_a.records[0].proposed)


class TestTermination:
    def _history_with_records(self, n_records, y=1.0, x=0.5):
        history = RunHistory(space=SPACE_1D, plan=make_plan(), seed=0, seed_design_size=3)
        history.seed_X = np.zeros((3, 1))
        history.seed_values = np.zeros(3)
        for i in range(n_records):
            history.records.append(
                IterationRecord(
                    index=i + 1,
                    proposed=np.array([[0.5]]),
                    values=np.array([[1.0]]),
                    hyper=np.zeros(4),
                    laplace_diag=np.zeros(4),
                    incumbent_x=np.array([x]),
                    incumbent_y=y,
                    cumulative_evals=3 + i + 1,
                    wall_seconds=0.01,
                )
            )
        return history

    def test_max_evaluations_reason(self):
        history = self._history_with_records(5)
        criteria = TerminationCriteria(max_evaluations=8)
        assert check_termination(history, criteria, 0.0) == "max_evaluations"

    def test_wall_clock_reason(self):
        history = self._history_with_records(1)
        criteria = TerminationCriteria(max_wall_seconds=3600.0)
        assert check_termination(history, criteria, 3600.1) == "max_wall_seconds"
        assert check_termination(history, criteria, 10.0) is None

    def test_stagnation_reason(self):
        history = self._history_with_records(6)
        criteria = TerminationCriteria(max_evaluations=1000, x_tolerance=1e-3, y_tolerance=1e-3)
        assert check_termination(history, criteria, 0.0) == "stagnation"

    def test_moving_incumbent_is_not_stagnation(self):
        history = self._history_with_records(3, y=1.0)
        history.records.append(
            IterationRecord(
                index=4, proposed=np.array([[0.2]]), values=np.array([[0.5]]), hyper=np.zeros(4),
                laplace_diag=np.zeros(4), incumbent_x=np.array([0.2]), incumbent_y=0.5,
                cumulative_evals=8, wall_seconds=0.01,
            )
        )
        history.records.append(
            IterationRecord(
                index=5, proposed=np.array([[0.1]]), values=np.array([[0.2]]), hyper=np.zeros(4),
                laplace_diag=np.zeros(4), incumbent_x=np.array([0.1]), incumbent_y=0.2,
                cumulative_evals=9, wall_seconds=0.01,
            )
        )
        criteria = TerminationCriteria(max_evaluations=1000, x_tolerance=1e-3, y_tolerance=1e-3)
        assert check_termination(history, criteria, 0.0) is None

    def test_criteria_validation(self):
        with pytest.raises(DomainError):
            TerminationCriteria()
        with pytest.raises(DomainError):
            TerminationCriteria(max_evaluations=10, x_tolerance=0.1)


class TestRunBehavior:
    def test_incumbent_non_increasing(self):
        history = run_quick(max_evals=20)
        ys = [r.incumbent_y for r in history.records]
        assert all(b <= a for a, b in zip(ys, ys[1:]))
        observed_min = float(history.dataset().f.min())
        assert history.incumbent_y == observed_min

    def test_bitwise_reproducible(self):
        a = run_quick(repeats=2, batch=2, max_evals=30, seed=42, space=SPACE_2D)
        b = run_quick(repeats=2, batch=2, max_evals=30, seed=42, space=SPACE_2D)
        assert a.iterations == b.iterations
        np.testing.assert_array_equal(a.seed_X, b.seed_X)
        np.testing.assert_array_equal(np.asarray(a.seed_values), np.asarray(b.seed_values))
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.proposed, rb.proposed)
            np.testing.assert_array_equal(ra.values, rb.values)
            np.testing.assert_array_equal(ra.hyper, rb.hyper)
        np.testing.assert_array_equal(a.incumbent_x, b.incumbent_x)
        assert a.incumbent_y == b.incumbent_y

    def test_different_seed_changes_run(self):
        a = run_quick(seed=1, max_evals=12)
        b = run_quick(seed=2, max_evals=12)
        assert not np.array_equal(a.seed_X, b.seed_X)

    def test_objective_error_marks_failure_with_partial_history(self):
        calls = {"n": 0}

        def flaky(x, rng):
            calls["n"] += 1
            if calls["n"] > 9:
                raise RuntimeError("simulator crashed")
            return bowl(x, rng)

        history = run_quick(objective=flaky, max_evals=30, seed_design=6)
        assert history.failed
        assert "simulator crashed" in history.error
        assert history.iterations >= 1  # partial records preserved

    def test_failure_during_seeding_still_serializes(self, tmp_path):
        def broken(x, rng):
            raise RuntimeError("down")

        history = run_quick(objective=broken, max_evals=30, seed_design=6)
        assert history.failed and "seeding" in history.error
        history.to_csv(tmp_path / "h.csv")
        history.to_jsonl(tmp_path / "h.jsonl")
        assert (tmp_path / "h.csv").read_text().count("\n") == 1  # header only
        back = RunHistory.from_jsonl(tmp_path / "h.jsonl")
        assert back.failed and back.seed_X is None

    def test_posterior_mean_minimizer_emitted(self):
        history = run_quick(max_evals=16)
        assert history.posterior_mean_minimizer is not None
        assert SPACE_1D.contains(history.posterior_mean_minimizer)
        assert history.posterior_mean_value is not None

    def test_marginalized_acquisition_flag_runs_and_reproduces(self):
        def run():
            return run_gpbo(
                space=SPACE_1D,
                objective=bowl,
                plan=make_plan(),
                seed_design_size=5,
                priors=quick_priors(),
                termination=TerminationCriteria(max_evaluations=9),
                seed=21,
                map_restarts=2,
                initial_map_restarts=2,
                direct_budget=tiny_budget(),
                use_marginalized_acquisition=True,
            )

        a, b = run(), run()
        assert not a.failed and a.iterations >= 1
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.proposed, rb.proposed)

    def test_stagnation_run_stops_early(self):
        def constant(x, rng):
            return 5.0

        history = run_gpbo(
            space=SPACE_1D,
            objective=constant,
            plan=make_plan(),
            seed_design_size=4,
            priors=quick_priors(),
            termination=TerminationCriteria(max_evaluations=200, x_tolerance=2.0, y_tolerance=1e-6),
            seed=3,
            map_restarts=2,
            initial_map_restarts=2,
            direct_budget=tiny_budget(),
        )
        assert history.termination_reason == "stagnation"
        assert history.cumulative_evals < 200


class TestSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        history = run_quick(repeats=2, batch=2, max_evals=24, seed=11, space=SPACE_2D)
        path = tmp_path / "history.jsonl"
        history.to_jsonl(path)
        back = RunHistory.from_jsonl(path)
        assert back.iterations == history.iterations
        np.testing.assert_array_equal(back.seed_X, history.seed_X)
        for ra, rb in zip(history.records, back.records):
            np.testing.assert_array_equal(ra.proposed, rb.proposed)
            np.testing.assert_array_equal(ra.values, rb.values)
        assert back.termination_reason == history.termination_reason
        model_a = history.final_model()
        model_b = back.final_model()
        mesh = np.random.default_rng(0).random((10, 2))
        np.testing.assert_allclose(model_a.predict(mesh)[0], model_b.predict(mesh)[0], rtol=1e-12)

    def test_csv_deterministic_and_complete(self, tmp_path):
        a = run_quick(repeats=2, batch=1, max_evals=14, seed=5)
        b = run_quick(repeats=2, batch=1, max_evals=14, seed=5)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        a.to_csv(pa)
        b.to_csv(pb)
        assert pa.read_bytes() == pb.read_bytes()
        lines = pa.read_text().splitlines()
        assert len(lines) == 1 + a.cumulative_evals
        assert lines[0].startswith("iteration,eval_index,x1,y,y_best,log_noise_var")

    def test_substream_independent_of_order(self):
        a = substream(9, "eval", 3, 1, 0).standard_normal()
        substream(9, "eval", 99, 0, 0).standard_normal()
        b = substream(9, "eval", 3, 1, 0).standard_normal()
        assert a == b
