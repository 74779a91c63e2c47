"""Surrogate-fidelity evaluation against a high-sample ground-truth surrogate.

A ground-truth model is a GP fitted to a dense one-shot sample of the
objective; candidate surrogates from optimization runs are scored by the sum
of squared differences between their mean (and latent-sd) surfaces and the
ground truth's, over a fixed shared mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp
from .engine import RunHistory, substream
from .errors import DomainError, ResourceError
from .gp import GpModel
from .hyperlearn import HyperPriorSet, map_estimate
from .search_space import SearchSpace, latin_hypercube, unit_latin_hypercube

#: Dense-solve cap for the one-shot ground-truth sample.
MAX_GROUND_TRUTH_SAMPLES = 20_000

#: Mesh is at least this many points per dimension.
MIN_MESH_PER_DIM = 100


@dataclass(frozen=True)
class GroundTruthModel:
    """Reference surrogate plus its cached surface on the evaluation mesh."""

    model: GpModel
    space: SearchSpace
    mesh: np.ndarray  # (G, d) native coordinates
    mesh_mean: np.ndarray
    mesh_sd: np.ndarray

    def __post_init__(self):
        if self.mesh.shape[0] < MIN_MESH_PER_DIM * self.space.dims:
            raise DomainError(
                f"mesh of {self.mesh.shape[0]} points is below the floor of "
                f"{MIN_MESH_PER_DIM} per dimension"
            )

    @property
    def mesh_size(self) -> int:
        return self.mesh.shape[0]


def fit_ground_truth(
    objective,
    space: SearchSpace,
    n_samples: int,
    rng: np.random.Generator,
    priors: HyperPriorSet | None = None,
    mesh_size: int = 2000,
    restarts: int = 3,
    ard: bool = False,
) -> GroundTruthModel:
    """One evaluation at each of n_samples Latin-hypercube points, MAP fit,
    and cached mesh predictions."""
    if n_samples > MAX_GROUND_TRUTH_SAMPLES:
        raise ResourceError(f"{n_samples} samples exceed the dense-solve cap of {MAX_GROUND_TRUTH_SAMPLES}")
    evaluate = objective.evaluate if hasattr(objective, "evaluate") else objective
    priors = priors or HyperPriorSet.broad()

    design = latin_hypercube(space, n_samples, rng)
    values = np.array([float(evaluate(design.points[i], rng)) for i in range(n_samples)])
    data = gp.Dataset(design.unit_points(), values)
    hyper = map_estimate(data, priors, restarts=restarts, rng=rng, ard=ard)
    model = gp.fit(data, hyper)

    mesh_unit = unit_latin_hypercube(mesh_size, space.dims, rng)
    mesh = space.from_unit(mesh_unit)
    mean, var = model.predict(mesh_unit)
    return GroundTruthModel(model=model, space=space, mesh=mesh, mesh_mean=mean, mesh_sd=np.sqrt(var))


def _candidate_surfaces(candidate: GpModel, truth: GroundTruthModel):
    if candidate.dims != truth.space.dims:
        raise DomainError(
            f"candidate is {candidate.dims}-dimensional but the truth mesh is {truth.space.dims}-dimensional"
        )
    mean, var = candidate.predict(truth.space.to_unit(truth.mesh))
    return mean, np.sqrt(var)


def sse_mean(candidate: GpModel, truth: GroundTruthModel) -> float:
    """Sum over the mesh of squared mean-surface differences."""
    mean, _ = _candidate_surfaces(candidate, truth)
    return float(np.sum((mean - truth.mesh_mean) ** 2))


def sse_sigma(candidate: GpModel, truth: GroundTruthModel) -> float:
    """Sum over the mesh of squared latent-sd-surface differences."""
    _, sd = _candidate_surfaces(candidate, truth)
    return float(np.sum((sd - truth.mesh_sd) ** 2))


@dataclass
class RunSummary:
    """Per-run final results and across-run statistics for one configuration."""

    label: str
    final_x: list[np.ndarray]
    final_y: list[float]
    sse_mean_values: list[float]
    sse_sigma_values: list[float]
    evals: list[int]
    wall_seconds: list[float]
    median_final_y: float = field(init=False)
    iqr_final_y: float | None = field(init=False)
    variance_final_y: float | None = field(init=False)
    median_sse_mean: float = field(init=False)
    median_sse_sigma: float = field(init=False)
    iqr_defined: bool = field(init=False)

    def __post_init__(self):
        if not self.final_y:
            raise DomainError("summary needs at least one run")
        y = np.asarray(self.final_y, dtype=float)
        self.median_final_y = float(np.median(y))
        self.median_sse_mean = float(np.median(self.sse_mean_values))
        self.median_sse_sigma = float(np.median(self.sse_sigma_values))
        if y.size >= 2:
            q75, q25 = np.percentile(y, [75, 25])
            self.iqr_final_y = float(q75 - q25)
            self.variance_final_y = float(np.var(y, ddof=1))
            self.iqr_defined = True
        else:
            self.iqr_final_y = None
            self.variance_final_y = None
            self.iqr_defined = False

    @property
    def n_runs(self) -> int:
        return len(self.final_y)


def summarize_runs(histories: list[RunHistory], truth: GroundTruthModel, label: str = "") -> RunSummary:
    """Fidelity and outcome statistics for completed runs of one configuration."""
    if not histories:
        raise DomainError("summarize_runs needs at least one history")
    final_x, final_y, sses_mean, sses_sigma, evals, wall = [], [], [], [], [], []
    for history in histories:
        model = history.final_model()
        final_x.append(history.incumbent_x)
        final_y.append(float(history.incumbent_y))
        sses_mean.append(sse_mean(model, truth))
        sses_sigma.append(sse_sigma(model, truth))
        evals.append(history.cumulative_evals)
        wall.append(history.wall_seconds)
    return RunSummary(
        label=label or (histories[0].plan.label() if histories else ""),
        final_x=final_x,
        final_y=final_y,
        sse_mean_values=sses_mean,
        sse_sigma_values=sses_sigma,
        evals=evals,
        wall_seconds=wall,
    )


def surface_table(model: GpModel, space: SearchSpace, mesh_native: np.ndarray):
    """(mesh, mean, sd) columns for surface exports and plotting scripts."""
    mean, var = model.predict(space.to_unit(mesh_native))
    return mesh_native, mean, np.sqrt(var)


def grid_mesh(space: SearchSpace, per_dim: int) -> np.ndarray:
    """Regular native-coordinate lattice, per_dim points per dimension."""
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(space.lower, space.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def ground_truth_for_objective(
    objective,
    n_samples: int,
    seed: int,
    mesh_size: int = 2000,
    restarts: int = 3,
) -> GroundTruthModel:
    """Convenience wrapper with a derived generator, for harness use."""
    rng = substream(seed, "ground-truth")
    return fit_ground_truth(objective, objective.space, n_samples, rng, mesh_size=mesh_size, restarts=restarts)
