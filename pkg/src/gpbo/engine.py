"""The optimization loop: seed, propose, evaluate (with repeats), refit.

One iteration proposes ``batch_size`` locations, evaluates each ``repeats``
times (every result enters the dataset as its own row), re-estimates the
hyperparameters (MAP + Laplace), and updates the incumbent. All randomness is
drawn from substreams keyed by (run seed, role, iteration, point, repeat), so
evaluation order can never change results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .acquisition import AcquisitionSpec, select_batch_qei, select_batch_thompson, select_batch_ucb_pe
from .direct import DirectBudget, default_budget, direct_maximize
from .errors import DomainError
from .gp import Dataset, GpModel, MaternHyperparams
from .hyperlearn import HyperPriorSet, MarginalizedPredictor, laplace_covariance, map_estimate
from .search_space import SearchSpace, latin_hypercube


def _label_key(label) -> int:
    if isinstance(label, str):
        return int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "big")
    return int(label)


def substream(seed: int, *path) -> np.random.Generator:
    """Independent, reproducible generator for a labeled role in a run."""
    key = tuple(_label_key(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class SamplingPlan:
    """How many locations per iteration and how often each is re-evaluated."""

    repeats: int = 1
    batch_size: int = 1
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)

    def __post_init__(self):
        if self.repeats < 1 or self.batch_size < 1:
            raise DomainError("repeats and batch_size must be >= 1")
        if self.acquisition.batch_size not in (1, self.batch_size):
            raise DomainError(
                f"acquisition batch_size {self.acquisition.batch_size} disagrees with plan batch_size {self.batch_size}"
            )

    @property
    def evals_per_iteration(self) -> int:
        return self.repeats * self.batch_size

    @property
    def is_single(self) -> bool:
        return self.repeats == 1 and self.batch_size == 1

    @property
    def is_hybrid(self) -> bool:
        return self.repeats > 1 and self.batch_size > 1

    def label(self) -> str:
        return f"{self.acquisition.family}_rs{self.repeats}_ms{self.batch_size}"


@dataclass(frozen=True)
class TerminationCriteria:
    max_iterations: int | None = None
    max_evaluations: int | None = None
    max_wall_seconds: float | None = None
    x_tolerance: float | None = None
    y_tolerance: float | None = None

    STAGNATION_WINDOW = 5

    def __post_init__(self):
        if self.max_iterations is None and self.max_evaluations is None and self.max_wall_seconds is None:
            raise DomainError("set at least one of max_iterations / max_evaluations / max_wall_seconds")
        if (self.x_tolerance is None) != (self.y_tolerance is None):
            raise DomainError("stagnation needs both x_tolerance and y_tolerance")


@dataclass
class IterationRecord:
    index: int
    proposed: np.ndarray  # (m, d) native coordinates
    values: np.ndarray  # (m, repeats)
    hyper: np.ndarray  # log vector after the update
    laplace_diag: np.ndarray
    incumbent_x: np.ndarray
    incumbent_y: float
    cumulative_evals: int
    wall_seconds: float


@dataclass
class RunHistory:
    space: SearchSpace
    plan: SamplingPlan
    seed: int
    seed_design_size: int
    seed_X: np.ndarray | None = None  # native coordinates
    seed_values: np.ndarray | None = None
    seed_hyper: np.ndarray | None = None
    seed_laplace_diag: np.ndarray | None = None
    records: list[IterationRecord] = field(default_factory=list)
    termination_reason: str | None = None
    failed: bool = False
    error: str | None = None
    incumbent_x: np.ndarray | None = None
    incumbent_y: float = np.inf
    posterior_mean_minimizer: np.ndarray | None = None
    posterior_mean_value: float | None = None
    wall_seconds: float = 0.0
    ard: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def cumulative_evals(self) -> int:
        n = 0 if self.seed_values is None else len(self.seed_values)
        return n + sum(r.values.size for r in self.records)

    @property
    def final_hyper(self) -> MaternHyperparams | None:
        vec = self.records[-1].hyper if self.records else self.seed_hyper
        if vec is None:
            return None
        return MaternHyperparams.from_log_vector(vec, ard_dims=self.space.dims if self.ard else None)

    def dataset(self) -> Dataset:
        """Rebuild the full training set (unit coordinates), repeats as rows."""
        X = [self.space.to_unit(self.seed_X)]
        f = [np.asarray(self.seed_values, dtype=float)]
        for rec in self.records:
            unit = self.space.to_unit(rec.proposed)
            X.append(np.repeat(unit, rec.values.shape[1], axis=0))
            f.append(rec.values.reshape(-1))
        return Dataset(np.vstack(X), np.concatenate(f))

    def final_model(self) -> GpModel:
        hyper = self.final_hyper
        if hyper is None:
            raise DomainError("run has no fitted hyperparameters")
        return gp.fit(self.dataset(), hyper)

    # -- serialization -------------------------------------------------

    def _hyper_names(self) -> list[str]:
        if self.ard:
            lengths = [f"log_length_scale_{i + 1}" for i in range(self.space.dims)]
        else:
            lengths = ["log_length_scale"]
        return ["log_noise_var", "log_amplitude", *lengths, "mean"]

    def to_csv(self, path) -> None:
        """Flat per-evaluation table; deterministic fields only, so identical
        config + seed reproduce the file byte for byte. A run that failed
        before the seed fit still writes whatever rows it has."""
        names = self.space.dim_names()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "eval_index", *names, "y", "y_best", *self._hyper_names()])
            if self.seed_values is None or self.seed_hyper is None:
                return
            best = np.inf
            idx = 0
            for i, (x, y) in enumerate(zip(self.seed_X, self.seed_values)):
                best = min(best, float(y))
                writer.writerow([0, idx, *map(repr, map(float, x)), repr(float(y)), repr(best), *map(repr, map(float, self.seed_hyper))])
                idx += 1
            for rec in self.records:
                for j, x in enumerate(rec.proposed):
                    for value in rec.values[j]:
                        best = min(best, float(value))
                        writer.writerow(
                            [rec.index, idx, *map(repr, map(float, x)), repr(float(value)), repr(best), *map(repr, map(float, rec.hyper))]
                        )
                        idx += 1

    def to_jsonl(self, path) -> None:
        """One record per line: run header, seed phase, iterations, result.
        Wall-clock timings live here, not in the CSV."""
        def dump(obj):
            return json.dumps(obj, sort_keys=True)

        with open(path, "w") as fh:
            fh.write(
                dump(
                    {
                        "type": "run",
                        "seed": self.seed,
                        "space": {
                            "lower": self.space.lower.tolist(),
                            "upper": self.space.upper.tolist(),
                            "names": list(self.space.dim_names()),
                        },
                        "plan": {
                            "repeats": self.plan.repeats,
                            "batch_size": self.plan.batch_size,
                            "family": self.plan.acquisition.family,
                            "ucb_beta": self.plan.acquisition.ucb_beta,
                            "ts_grid_size": self.plan.acquisition.ts_grid_size,
                        },
                        "seed_design_size": self.seed_design_size,
                        "ard": self.ard,
                    }
                )
                + "\n"
            )
            if self.seed_values is not None and self.seed_hyper is not None:
                fh.write(
                    dump(
                        {
                            "type": "seed",
                            "X": self.seed_X.tolist(),
                            "values": np.asarray(self.seed_values).tolist(),
                            "hyper": self.seed_hyper.tolist(),
                            "laplace_diag": self.seed_laplace_diag.tolist(),
                        }
                    )
                    + "\n"
                )
            for rec in self.records:
                fh.write(
                    dump(
                        {
                            "type": "iteration",
                            "index": rec.index,
                            "proposed": rec.proposed.tolist(),
                            "values": rec.values.tolist(),
                            "hyper": rec.hyper.tolist(),
                            "laplace_diag": rec.laplace_diag.tolist(),
                            "incumbent_x": rec.incumbent_x.tolist(),
                            "incumbent_y": rec.incumbent_y,
                            "cumulative_evals": rec.cumulative_evals,
                            "wall_ms": round(rec.wall_seconds * 1000.0, 3),
                        }
                    )
                    + "\n"
                )
            fh.write(
                dump(
                    {
                        "type": "result",
                        "termination_reason": self.termination_reason,
                        "failed": self.failed,
                        "error": self.error,
                        "incumbent_x": None if self.incumbent_x is None else self.incumbent_x.tolist(),
                        "incumbent_y": None if not np.isfinite(self.incumbent_y) else self.incumbent_y,
                        "posterior_mean_minimizer": None
                        if self.posterior_mean_minimizer is None
                        else self.posterior_mean_minimizer.tolist(),
                        "posterior_mean_value": self.posterior_mean_value,
                        "total_evals": self.cumulative_evals,
                        "wall_seconds": round(self.wall_seconds, 6),
                    }
                )
                + "\n"
            )

    @classmethod
    def from_jsonl(cls, path) -> "RunHistory":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        header = next(rec for rec in lines if rec["type"] == "run")
        space = SearchSpace(
            lower=np.asarray(header["space"]["lower"]),
            upper=np.asarray(header["space"]["upper"]),
            names=tuple(header["space"]["names"]),
        )
        plan = SamplingPlan(
            repeats=header["plan"]["repeats"],
            batch_size=header["plan"]["batch_size"],
            acquisition=AcquisitionSpec(
                family=header["plan"]["family"],
                batch_size=header["plan"]["batch_size"],
                ucb_beta=header["plan"]["ucb_beta"],
                ts_grid_size=header["plan"]["ts_grid_size"],
            ),
        )
        history = cls(
            space=space,
            plan=plan,
            seed=header["seed"],
            seed_design_size=header["seed_design_size"],
            ard=header.get("ard", False),
        )
        for rec in lines:
            if rec["type"] == "seed":
                history.seed_X = np.asarray(rec["X"], dtype=float)
                history.seed_values = np.asarray(rec["values"], dtype=float)
                history.seed_hyper = np.asarray(rec["hyper"], dtype=float)
                history.seed_laplace_diag = np.asarray(rec["laplace_diag"], dtype=float)
            elif rec["type"] == "iteration":
                history.records.append(
                    IterationRecord(
                        index=rec["index"],
                        proposed=np.asarray(rec["proposed"], dtype=float),
                        values=np.asarray(rec["values"], dtype=float),
                        hyper=np.asarray(rec["hyper"], dtype=float),
                        laplace_diag=np.asarray(rec["laplace_diag"], dtype=float),
                        incumbent_x=np.asarray(rec["incumbent_x"], dtype=float),
                        incumbent_y=rec["incumbent_y"],
                        cumulative_evals=rec["cumulative_evals"],
                        wall_seconds=rec.get("wall_ms", 0.0) / 1000.0,
                    )
                )
            elif rec["type"] == "result":
                history.termination_reason = rec["termination_reason"]
                history.failed = rec["failed"]
                history.error = rec["error"]
                if rec["incumbent_x"] is not None:
                    history.incumbent_x = np.asarray(rec["incumbent_x"], dtype=float)
                if rec["incumbent_y"] is not None:
                    history.incumbent_y = rec["incumbent_y"]
                if rec["posterior_mean_minimizer"] is not None:
                    history.posterior_mean_minimizer = np.asarray(rec["posterior_mean_minimizer"], dtype=float)
                history.posterior_mean_value = rec["posterior_mean_value"]
                history.wall_seconds = rec["wall_seconds"]
        return history


def check_termination(history: RunHistory, criteria: TerminationCriteria, clock_seconds: float) -> str | None:
    """First satisfied criterion, checked in the order: evaluations,
    iterations, wall clock, stagnation."""
    if criteria.max_evaluations is not None and history.cumulative_evals >= criteria.max_evaluations:
        return "max_evaluations"
    if criteria.max_iterations is not None and history.iterations >= criteria.max_iterations:
        return "max_iterations"
    if criteria.max_wall_seconds is not None and clock_seconds >= criteria.max_wall_seconds:
        return "max_wall_seconds"
    if criteria.x_tolerance is not None and history.iterations >= TerminationCriteria.STAGNATION_WINDOW:
        window = history.records[-TerminationCriteria.STAGNATION_WINDOW :]
        ys = np.array([r.incumbent_y for r in window])
        xs = np.array([r.incumbent_x for r in window])
        y_flat = ys.max() - ys.min() < criteria.y_tolerance
        x_flat = np.max(xs.max(axis=0) - xs.min(axis=0)) < criteria.x_tolerance
        if y_flat and x_flat:
            return "stagnation"
    return None


def propose_points(
    model,
    plan: SamplingPlan,
    space: SearchSpace,
    y_best: float,
    rng: np.random.Generator,
    budget: DirectBudget | None = None,
    iteration: int = 1,
) -> np.ndarray:
    """Next batch of locations (unit rows): serial argmax when batch_size is 1,
    otherwise the matching batch selector."""
    spec = plan.acquisition
    budget = budget or default_budget(space.dims)
    m = plan.batch_size
    if spec.family == "ei":
        return select_batch_qei(model, space, m, y_best, budget=budget)
    if spec.family == "ucb":
        beta = spec.beta_at(iteration, space.dims)
        return select_batch_ucb_pe(model, space, m, beta, budget=budget)
    return select_batch_thompson(model, space, m, rng, grid_size=spec.grid_size(space.dims))


def run_gpbo(
    space: SearchSpace,
    objective,
    plan: SamplingPlan,
    seed_design_size: int,
    priors: HyperPriorSet,
    termination: TerminationCriteria,
    seed: int,
    map_restarts: int = 3,
    initial_map_restarts: int = 5,
    direct_budget: DirectBudget | None = None,
    ard: bool = False,
    use_marginalized_acquisition: bool = False,
    clock=time.monotonic,
) -> RunHistory:
    """Full optimization run; returns a complete, serializable history.

    The objective is called as ``objective(native_point, rng)`` and must
    return one noisy scalar per call. An objective exception aborts the run
    with the partial history preserved and ``failed`` set.
    """
    if seed_design_size < 1:
        raise DomainError("seed_design_size must be >= 1")
    evaluate = objective.evaluate if hasattr(objective, "evaluate") else objective
    start = clock()
    history = RunHistory(space=space, plan=plan, seed=seed, seed_design_size=seed_design_size, ard=ard)

    design = latin_hypercube(space, seed_design_size, substream(seed, "design"))
    history.seed_X = design.points
    try:
        seed_values = np.array(
            [float(evaluate(design.points[i], substream(seed, "eval", 0, i, 0))) for i in range(seed_design_size)]
        )
    except Exception as err:  # objective failure: flush what we have
        history.failed = True
        history.error = f"objective failed during seeding: {err}"
        history.wall_seconds = clock() - start
        return history
    history.seed_values = seed_values

    dataset = Dataset(design.unit_points(), seed_values)
    hyper = map_estimate(
        dataset, priors, restarts=initial_map_restarts, rng=substream(seed, "map", 0), ard=ard
    )
    lap = laplace_covariance(dataset, priors, hyper, ard=ard)
    history.seed_hyper = hyper.to_log_vector()
    history.seed_laplace_diag = np.diag(lap.covariance)
    model = gp.fit(dataset, hyper)

    best_idx = int(np.argmin(seed_values))
    history.incumbent_x = design.points[best_idx].copy()
    history.incumbent_y = float(seed_values[best_idx])

    iteration = 0
    while True:
        reason = check_termination(history, termination, clock() - start)
        if reason is not None:
            history.termination_reason = reason
            break
        iteration += 1
        iter_start = clock()

        proposal_model = model
        if use_marginalized_acquisition and plan.batch_size == 1 and plan.acquisition.family in ("ei", "ucb"):
            proposal_model = MarginalizedPredictor(model, lap)
        acq_seed = seed if plan.acquisition.seed is None else plan.acquisition.seed
        proposed_unit = propose_points(
            proposal_model,
            plan,
            space,
            history.incumbent_y,
            substream(acq_seed, "acq", iteration),
            budget=direct_budget,
            iteration=iteration,
        )
        proposed_native = np.atleast_2d(space.from_unit(proposed_unit))

        values = np.empty((plan.batch_size, plan.repeats))
        try:
            for j in range(plan.batch_size):
                for r in range(plan.repeats):
                    values[j, r] = float(evaluate(proposed_native[j], substream(seed, "eval", iteration, j, r)))
        except Exception as err:
            history.failed = True
            history.error = f"objective failed at iteration {iteration}: {err}"
            history.wall_seconds = clock() - start
            return history

        # every repeat becomes its own row; summaries would hide the spread
        dataset = dataset.extended(np.repeat(proposed_unit, plan.repeats, axis=0), values.reshape(-1))
        hyper = map_estimate(
            dataset, priors, restarts=map_restarts, rng=substream(seed, "map", iteration), warm_start=hyper, ard=ard
        )
        lap = laplace_covariance(dataset, priors, hyper, ard=ard)
        model = gp.fit(dataset, hyper)

        flat_idx = int(np.argmin(values))
        flat_min = float(values.reshape(-1)[flat_idx])
        if flat_min < history.incumbent_y:
            history.incumbent_y = flat_min
            history.incumbent_x = proposed_native[flat_idx // plan.repeats].copy()

        history.records.append(
            IterationRecord(
                index=iteration,
                proposed=proposed_native,
                values=values,
                hyper=hyper.to_log_vector(),
                laplace_diag=np.diag(lap.covariance),
                incumbent_x=history.incumbent_x.copy(),
                incumbent_y=history.incumbent_y,
                cumulative_evals=history.cumulative_evals + values.size,
                wall_seconds=clock() - iter_start,
            )
        )

    # model-based optimum alongside the best raw observation
    mean_opt = direct_maximize(
        lambda pts: -model.predict(pts)[0], space.dims, direct_budget or default_budget(space.dims)
    )
    history.posterior_mean_minimizer = space.from_unit(mean_opt.x)
    history.posterior_mean_value = -mean_opt.value
    history.wall_seconds = clock() - start
    return history
