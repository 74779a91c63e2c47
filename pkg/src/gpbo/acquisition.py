"""Acquisition functions and batch selectors.

The engine minimizes the objective, and every acquisition here is phrased so
that larger is better; DIRECT then maximizes it over the unit cube. Batch
selectors return unit-cube rows; with a batch of one they run exactly the
serial code path, so results are bit-identical to the serial selectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import gp
from .direct import DirectBudget, default_budget, direct_maximize
from .errors import DomainError, NumericalError
from .gp import GpModel
from .search_space import SearchSpace, unit_latin_hypercube

FAMILIES = ("ei", "ucb", "ts")

#: Batch selections closer than this (sup norm, unit coords) count as collisions.
DISTINCT_TOL = 1e-9


@dataclass(frozen=True)
class AcquisitionSpec:
    """Which acquisition to run and how.

    ``seed``, when set, replaces the run seed as the root of the engine's
    per-iteration acquisition streams (Thompson draws); leave it None to keep
    whole-run reproducibility keyed on the run seed alone.
    """

    family: str = "ucb"
    batch_size: int = 1
    ucb_beta: float | str = 2.0
    ts_grid_size: int | None = None
    qei_fantasy: str = "posterior-mean"
    seed: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"acquisition family must be one of {FAMILIES}, got {self.family!r}")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if isinstance(self.ucb_beta, str):
            if self.ucb_beta != "schedule":
                raise DomainError("ucb_beta must be a positive number or 'schedule'")
        elif not self.ucb_beta > 0:
            raise DomainError("ucb_beta must be > 0")
        if self.ts_grid_size is not None and self.ts_grid_size < 1:
            raise DomainError("ts_grid_size must be >= 1")
        if self.qei_fantasy != "posterior-mean":
            raise DomainError("only the posterior-mean fantasy strategy is implemented")

    def beta_at(self, iteration: int, dims: int) -> float:
        if self.ucb_beta == "schedule":
            return ucb_beta_schedule(iteration, dims)
        return float(self.ucb_beta)

    def grid_size(self, dims: int) -> int:
        if self.ts_grid_size is not None:
            return self.ts_grid_size
        return default_ts_grid_size(dims)


def ucb_beta_schedule(iteration: int, dims: int, delta: float = 0.1) -> float:
    """Slowly growing confidence multiplier, beta_t = sqrt(2 log(d t^2 pi^2 / 6 delta))."""
    t = max(iteration, 1)
    return float(np.sqrt(2.0 * np.log(dims * t**2 * np.pi**2 / (6.0 * delta))))


def default_ts_grid_size(dims: int) -> int:
    """Joint draws pay a cubic factorization cost, so the grid is capped."""
    return min(1000 * dims, 4000)


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _ei_values(mean, sd, y_best):
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    improvement = y_best - mean
    out = np.maximum(improvement, 0.0)  # the sd = 0 limit
    positive = sd > 0.0
    if np.any(positive):
        z = improvement[positive] / sd[positive]
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * z**2)
        out[positive] = improvement[positive] * ndtr(z) + sd[positive] * pdf
    return out


def expected_improvement(model, x, y_best: float):
    """E[max(y_best - Y, 0)] under the posterior at x; zero when no mass improves."""
    x = np.asarray(x, dtype=float)
    mean, var = model.predict(np.atleast_2d(x))
    values = _ei_values(mean, np.sqrt(var), y_best)
    return float(values[0]) if x.ndim == 1 else values


def ucb_acquisition(model, x, beta: float):
    """Optimistic lower-bound score under minimization: -mean + beta * sd."""
    if not beta > 0:
        raise DomainError("beta must be > 0")
    x = np.asarray(x, dtype=float)
    mean, var = model.predict(np.atleast_2d(x))
    values = -mean + beta * np.sqrt(var)
    return float(values[0]) if x.ndim == 1 else values


def maximize_ei(model, dims: int, y_best: float, budget: DirectBudget, keep_points: bool = False):
    return direct_maximize(
        lambda pts: expected_improvement(model, pts, y_best), dims, budget, keep_points=keep_points
    )


def maximize_ucb(model, dims: int, beta: float, budget: DirectBudget, keep_points: bool = False):
    return direct_maximize(
        lambda pts: ucb_acquisition(model, pts, beta), dims, budget, keep_points=keep_points
    )


class CovarianceConditionedModel:
    """Posterior with extra locations folded into the covariance only.

    The mean surface comes from the base model; the variance is conditioned on
    the pending locations (their values are irrelevant to the covariance), so
    pure-exploration batch steps see shrunken uncertainty without inventing
    outcomes.
    """

    def __init__(self, base: GpModel, pending: np.ndarray):
        self.base = base
        pending = np.atleast_2d(np.asarray(pending, dtype=float))
        fantasy_values = np.full(pending.shape[0], base.hyper.mean)
        self._augmented = gp.fit(base.data.extended(pending, fantasy_values), base.hyper)

    def predict(self, X, include_noise: bool = False):
        mean, _ = self.base.predict(X, include_noise=include_noise)
        _, var = self._augmented.predict(X, include_noise=include_noise)
        return mean, var


def _resolve_collision(result, selected: list[np.ndarray]) -> np.ndarray:
    """Best evaluated point at least DISTINCT_TOL away from every selection."""
    order = np.argsort(-result.evaluated_values)
    for idx in order:
        candidate = result.evaluated_points[idx]
        if all(np.max(np.abs(candidate - s)) >= DISTINCT_TOL for s in selected):
            return candidate
    raise NumericalError("DIRECT produced no point distinct from the current batch")


def _pick_distinct(result, selected: list[np.ndarray]) -> np.ndarray:
    x = result.x
    if all(np.max(np.abs(x - s)) >= DISTINCT_TOL for s in selected):
        return x
    return _resolve_collision(result, selected)


def select_batch_ucb_pe(
    model: GpModel,
    space: SearchSpace,
    q: int,
    beta: float,
    budget: DirectBudget | None = None,
) -> np.ndarray:
    """Greedy batch: serial argmax first, then re-argmax after covariance-only
    conditioning on the pending points. Returns q pairwise-distinct unit rows."""
    if q < 1:
        raise DomainError("q must be >= 1")
    budget = budget or default_budget(space.dims)
    first = direct_maximize(
        lambda pts: ucb_acquisition(model, pts, beta), space.dims, budget, keep_points=q > 1
    )
    selected = [first.x]
    for _ in range(1, q):
        conditioned = CovarianceConditionedModel(model, np.asarray(selected))
        result = direct_maximize(
            lambda pts: ucb_acquisition(conditioned, pts, beta), space.dims, budget, keep_points=True
        )
        selected.append(_pick_distinct(result, selected))
    return np.asarray(selected)


def select_batch_qei(
    model: GpModel,
    space: SearchSpace,
    q: int,
    y_best: float,
    budget: DirectBudget | None = None,
) -> np.ndarray:
    """Greedy believer batch: argmax EI, append a fantasy observation at the
    posterior mean (no noise draw), refit, repeat. The running incumbent
    absorbs fantasy means so already-chosen points stop scoring."""
    if q < 1:
        raise DomainError("q must be >= 1")
    budget = budget or default_budget(space.dims)
    first = direct_maximize(
        lambda pts: expected_improvement(model, pts, y_best), space.dims, budget, keep_points=q > 1
    )
    selected = [first.x]
    current = model
    incumbent = y_best
    for _ in range(1, q):
        fantasy_mean, _ = current.predict(selected[-1])
        incumbent = min(incumbent, fantasy_mean)
        current = gp.fit(
            current.data.extended(selected[-1][None, :], [fantasy_mean]), current.hyper
        )
        result = direct_maximize(
            lambda pts: expected_improvement(current, pts, incumbent),
            space.dims,
            budget,
            keep_points=True,
        )
        selected.append(_pick_distinct(result, selected))
    return np.asarray(selected)


def select_batch_thompson(
    model: GpModel,
    space: SearchSpace,
    q: int,
    rng: np.random.Generator,
    grid_size: int | None = None,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """q independent joint draws, each contributing its grid minimizer.

    Every draw uses a fresh Latin-hypercube candidate grid unless an explicit
    grid is supplied. Coinciding minimizers are kept: the draws are
    independent, and duplicates are information about posterior concentration.
    """
    if q < 1:
        raise DomainError("q must be >= 1")
    grid_size = grid_size or default_ts_grid_size(space.dims)
    picks = []
    for _ in range(q):
        grid = candidates if candidates is not None else unit_latin_hypercube(grid_size, space.dims, rng)
        draw = gp.sample_function(model, grid, rng)
        picks.append(grid[int(np.argmin(draw))])
    return np.asarray(picks)


def thompson_select(
    model: GpModel,
    space: SearchSpace,
    rng: np.random.Generator,
    grid_size: int | None = None,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Serial Thompson step: one joint draw, return its minimizer."""
    return select_batch_thompson(model, space, 1, rng, grid_size=grid_size, candidates=candidates)[0]


def acquisition_surface(model, spec: AcquisitionSpec, y_best: float, mesh: np.ndarray, iteration: int = 1):
    """Acquisition values over a mesh of unit rows, for surface exports."""
    if spec.family == "ei":
        return expected_improvement(model, mesh, y_best)
    if spec.family == "ucb":
        return ucb_acquisition(model, mesh, spec.beta_at(iteration, mesh.shape[1]))
    raise DomainError("surface export supports the ei and ucb families")
