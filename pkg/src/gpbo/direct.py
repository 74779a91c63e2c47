"""DIRECT (dividing rectangles) global maximization over the unit cube.

Deterministic Lipschitzian search: each iteration picks the potentially
optimal rectangles from the lower-right convex hull over (max side length,
center value), trisects them along their longest sides, and evaluates the new
centers. The objective must accept an (n, d) array of unit-cube rows and
return n values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


# Trisection floor: sides below 3^-MAX_DEPTH are never divided again, so
# probe offsets stay far above double-precision resolution and centers stay
# pairwise distinct.
MAX_DEPTH = 30


@dataclass(frozen=True)
class DirectBudget:
    max_evals: int
    max_iters: int = 10_000
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.max_evals < 1 or self.max_iters < 1:
            raise DomainError("DIRECT budget counts must be positive")
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")


@dataclass
class Rectangle:
    """Axis-aligned cell of the partition; sides are exact powers of 1/3,
    tracked by their integer trisection counts."""

    center: np.ndarray
    divisions: np.ndarray  # per-dimension trisection count k, side = 3^-k
    value: float

    @property
    def side_lengths(self) -> np.ndarray:
        return 3.0 ** (-self.divisions.astype(float))

    @property
    def max_side(self) -> float:
        return 3.0 ** (-float(self.divisions.min()))

    @property
    def volume(self) -> float:
        return 3.0 ** (-float(self.divisions.sum()))


@dataclass
class DirectResult:
    x: np.ndarray
    value: float
    evals: int
    iterations: int
    nonfinite_evals: int = 0
    trace: list[tuple[int, float]] = field(default_factory=list)
    evaluated_points: np.ndarray | None = None
    evaluated_values: np.ndarray | None = None
    rectangles: list[Rectangle] | None = None


def _potentially_optimal(rectangles: list[Rectangle], best_value: float, epsilon: float) -> list[int]:
    """Indices of rectangles on the slack-adjusted hull, ties kept."""
    by_side: dict[int, list[int]] = {}
    for idx, rect in enumerate(rectangles):
        min_div = int(rect.divisions.min())
        if min_div >= MAX_DEPTH:
            continue
        by_side.setdefault(min_div, []).append(idx)

    # One candidate value per distinct side length: the best center value.
    sides = []
    tops = []
    groups = []
    for min_div in sorted(by_side):
        idxs = by_side[min_div]
        vals = [rectangles[i].value for i in idxs]
        top = max(vals)
        sides.append(3.0 ** (-min_div))
        tops.append(top)
        groups.append([i for i, v in zip(idxs, vals) if v == top])
    sides_arr = np.asarray(sides)  # ascending
    tops_arr = np.asarray(tops)

    # Rectangle j is potentially optimal iff some Lipschitz slope L >= 0 has
    # f_j + L*s_j >= f_i + L*s_i for every i, and the bound clears the
    # epsilon-slack threshold over the incumbent.
    threshold = best_value + epsilon * (abs(best_value) + 1e-8)
    selected: list[int] = []
    for g in range(len(sides_arr)):
        s_j, f_j = sides_arr[g], tops_arr[g]
        smaller = sides_arr < s_j
        larger = sides_arr > s_j
        lower = 0.0
        if smaller.any():
            lower = max(lower, float(np.max((tops_arr[smaller] - f_j) / (s_j - sides_arr[smaller]))))
        if larger.any():
            upper = float(np.min((tops_arr[larger] - f_j) / (s_j - sides_arr[larger])))
            if lower > upper + 1e-15:
                continue
            if f_j + upper * s_j < threshold:
                continue
        # no larger rectangle: the slope is unbounded above, both checks pass
        selected.extend(groups[g])
    return selected


def direct_maximize(
    func,
    dims: int,
    budget: DirectBudget,
    keep_points: bool = False,
    keep_rectangles: bool = False,
    inspect=None,
) -> DirectResult:
    """Maximize a deterministic function over [0, 1]^dims.

    ``inspect(iteration, rectangles)`` is called after every iteration when
    given, for partition diagnostics. Non-finite objective values are treated
    as -inf (the rectangle is never potentially optimal) and counted.
    """
    if dims < 1:
        raise DomainError("dims must be >= 1")

    nonfinite = 0
    all_points: list[np.ndarray] = []
    all_values: list[float] = []

    def evaluate(points: np.ndarray) -> np.ndarray:
        nonlocal nonfinite
        values = np.asarray(func(points), dtype=float).reshape(-1)
        if values.shape[0] != points.shape[0]:
            raise DomainError("objective returned a value count different from the point count")
        bad = ~np.isfinite(values)
        if bad.any():
            nonfinite += int(bad.sum())
            values = np.where(bad, -np.inf, values)
        if keep_points:
            all_points.extend(points)
            all_values.extend(values.tolist())
        return values

    center = np.full(dims, 0.5)
    value = float(evaluate(center[None, :])[0])
    evals = 1
    rectangles = [Rectangle(center=center, divisions=np.zeros(dims, dtype=int), value=value)]
    best_x, best_value = center.copy(), value
    trace: list[tuple[int, float]] = [(evals, best_value)]

    iteration = 0
    while iteration < budget.max_iters and evals < budget.max_evals:
        iteration += 1
        chosen = _potentially_optimal(rectangles, best_value, budget.epsilon)
        if not chosen:
            break
        # deterministic processing order: larger first, then better, then older
        chosen.sort(key=lambda i: (-rectangles[i].max_side, -rectangles[i].value, i))

        new_rects: list[Rectangle] = []
        divided: set[int] = set()
        for idx in chosen:
            if evals >= budget.max_evals:
                break
            rect = rectangles[idx]
            min_div = int(rect.divisions.min())
            long_dims = np.where(rect.divisions == min_div)[0]
            delta = 3.0 ** (-(min_div + 1))

            probes = []
            for j in long_dims:
                for sign in (+1.0, -1.0):
                    p = rect.center.copy()
                    p[j] += sign * delta
                    probes.append(p)
            probe_values = evaluate(np.asarray(probes))
            evals += len(probes)

            arg = int(np.argmax(probe_values))
            if probe_values[arg] > best_value:
                best_value = float(probe_values[arg])
                best_x = probes[arg].copy()

            # best-first: dimensions whose better probe is higher divide first,
            # keeping their children larger
            pair_best = np.maximum(probe_values[0::2], probe_values[1::2])
            order = sorted(range(long_dims.size), key=lambda k: (-pair_best[k], long_dims[k]))

            divided.add(idx)
            parent_divs = rect.divisions.copy()
            for pair in order:
                j = long_dims[pair]
                parent_divs = parent_divs.copy()
                parent_divs[j] += 1
                for sign_idx, sign in enumerate((+1.0, -1.0)):
                    c = rect.center.copy()
                    c[j] += sign * delta
                    new_rects.append(
                        Rectangle(center=c, divisions=parent_divs.copy(), value=float(probe_values[2 * pair + sign_idx]))
                    )
            # the center keeps the fully divided side vector
            new_rects.append(Rectangle(center=rect.center, divisions=parent_divs.copy(), value=rect.value))

        rectangles = [r for i, r in enumerate(rectangles) if i not in divided]
        rectangles.extend(new_rects)
        trace.append((evals, best_value))
        if inspect is not None:
            inspect(iteration, rectangles)

    return DirectResult(
        x=best_x,
        value=best_value,
        evals=evals,
        iterations=iteration,
        nonfinite_evals=nonfinite,
        trace=trace,
        evaluated_points=np.asarray(all_points) if keep_points else None,
        evaluated_values=np.asarray(all_values) if keep_points else None,
        rectangles=rectangles if keep_rectangles else None,
    )


def default_budget(dims: int, epsilon: float = 1e-4) -> DirectBudget:
    """Acquisition-maximization default: cheap relative to the objective."""
    return DirectBudget(max_evals=500 * dims, epsilon=epsilon)


def write_trace_csv(result: DirectResult, path) -> None:
    """Optimizer diagnostic: evaluations vs incumbent value per iteration."""
    with open(path, "w") as fh:
        fh.write("evals,incumbent\n")
        for evals, value in result.trace:
            fh.write(f"{evals},{value!r}\n")
