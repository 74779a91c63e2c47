"""Bounded box search domains, unit-cube scaling, and Latin-hypercube designs.

All optimization and GP computation elsewhere in the package happens in
unit-cube coordinates; this module owns the affine maps between native and
unit coordinates and the stratified seed designs drawn over them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SearchSpace:
    """Axis-aligned box in R^d with optional per-dimension labels."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or upper.ndim != 1 or lower.shape != upper.shape:
            raise DomainError("lower and upper bounds must be 1-d and the same length")
        if lower.size < 1:
            raise DomainError("search space needs at least one dimension")
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise DomainError("bounds must be finite")
        bad = np.where(lower >= upper)[0]
        if bad.size:
            raise DomainError(f"lower >= upper in dimension(s) {bad.tolist()}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != lower.size:
                raise DomainError("names length must match dimension count")
            object.__setattr__(self, "names", names)

    @property
    def dims(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def dim_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return self.names
        return tuple(f"x{i + 1}" for i in range(self.dims))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def to_unit(self, x) -> np.ndarray:
        """Map native coordinates affinely onto [0, 1]^d.

        Accepts a single point (d,) or a stack of points (n, d). Raises
        DomainError identifying the first offending coordinate if any input
        lies outside the box.
        """
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        if pts.shape[-1] != self.dims:
            raise DomainError(f"expected {self.dims}-dimensional points, got shape {x.shape}")
        low_viol = pts < self.lower
        high_viol = pts > self.upper
        if low_viol.any() or high_viol.any():
            row, col = np.argwhere(low_viol | high_viol)[0]
            raise DomainError(
                f"coordinate {col} of point {row} ({pts[row, col]!r}) is outside "
                f"[{self.lower[col]}, {self.upper[col]}]"
            )
        u = (pts - self.lower) / self.span
        return u[0] if x.ndim == 1 else u

    def from_unit(self, u) -> np.ndarray:
        """Inverse of :meth:`to_unit`; input must lie in the unit cube."""
        u = np.asarray(u, dtype=float)
        pts = np.atleast_2d(u)
        if pts.shape[-1] != self.dims:
            raise DomainError(f"expected {self.dims}-dimensional points, got shape {u.shape}")
        if (pts < 0).any() or (pts > 1).any():
            row, col = np.argwhere((pts < 0) | (pts > 1))[0]
            raise DomainError(f"unit coordinate {col} of point {row} ({pts[row, col]!r}) is outside [0, 1]")
        x = self.lower + pts * self.span
        return x[0] if u.ndim == 1 else x


@dataclass(frozen=True)
class DesignMatrix:
    """A batch of sample locations, one row per point, in native coordinates."""

    points: np.ndarray
    space: SearchSpace = field(repr=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] != self.space.dims:
            raise DomainError("design matrix width must equal the space dimension")
        for i, row in enumerate(pts):
            if not self.space.contains(row):
                raise DomainError(f"design row {i} lies outside the search space")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def rows(self) -> int:
        return self.points.shape[0]

    def unit_points(self) -> np.ndarray:
        return self.space.to_unit(self.points)

    def to_csv(self, path) -> None:
        """Write the design with a header row of dimension names."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.space.dim_names())
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])


def unit_latin_hypercube(n: int, dims: int, rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube design on [0,1]^dims: one point per stratum per dimension.

    Per dimension, a stratum permutation is drawn from ``rng`` (Fisher-Yates
    shuffle) and each point is jittered uniformly within its stratum;
    deterministic for a given generator state.
    """
    if n < 1:
        raise DomainError("Latin hypercube needs n >= 1 points")
    if dims < 1:
        raise DomainError("Latin hypercube needs dims >= 1")
    u = np.empty((n, dims), dtype=float)
    for j in range(dims):
        perm = rng.permutation(n)
        jitter = rng.random(n)
        u[:, j] = (perm + jitter) / n
    return u


def latin_hypercube(space: SearchSpace, n: int, rng: np.random.Generator) -> DesignMatrix:
    """Stratified quasi-random seed design over ``space``."""
    u = unit_latin_hypercube(n, space.dims, rng)
    return DesignMatrix(points=space.from_unit(u), space=space)


def default_seed_count(dims: int) -> int:
    """Heuristic seed-design size: ten points per dimension."""
    return 10 * dims
