"""Benchmark objectives and the external-objective plug-in protocol.

Every objective is a pure function of (native point, generator state): the
same stream always reproduces the same value. Noise is drawn from the stream
passed per evaluation, never from module state.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .search_space import SearchSpace

T_MAX_DEFAULT = 300.0

# 3-d benchmark box: asymmetric bounds that keep the global basin interior.
ACKLEY3_LOWER = (-32.768, -12.21, -32.768)
ACKLEY3_UPPER = (32.768, 32.768, 5.14)

SYNTHETIC_TTK_CAP = 600.0


@dataclass(frozen=True)
class NoisyObjective:
    """A named noisy scalar objective over a bounded box."""

    name: str
    space: SearchSpace
    evaluate: Callable[[np.ndarray, np.random.Generator], float]
    optimum_x: np.ndarray | None = None
    optimum_value: float | None = None

    @property
    def dims(self) -> int:
        return self.space.dims

    def __call__(self, x, rng: np.random.Generator) -> float:
        return self.evaluate(np.asarray(x, dtype=float), rng)


def ackley(x, noise_var: float = 0.0, rng: np.random.Generator | None = None) -> float:
    """Ackley in the standard form (a=20, b=0.2, c=2*pi) plus Gaussian noise.

    Zero at the origin, many closely spaced local minima elsewhere.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    a, b, c = 20.0, 0.2, 2.0 * np.pi
    value = (
        -a * np.exp(-b * np.sqrt(np.sum(x**2) / d))
        - np.exp(np.sum(np.cos(c * x)) / d)
        + a
        + np.e
    )
    if noise_var > 0.0:
        if rng is None:
            raise DomainError("a generator is required when noise_var > 0")
        value += rng.normal(0.0, np.sqrt(noise_var))
    return float(value)


def forrester(x, noise_var: float = 0.0, rng: np.random.Generator | None = None) -> float:
    """(6x - 2)^2 sin(12x - 4) on [0, 1] plus Gaussian noise."""
    x = float(np.asarray(x).reshape(-1)[0])
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"forrester input {x} outside [0, 1]")
    value = (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0)
    if noise_var > 0.0:
        if rng is None:
            raise DomainError("a generator is required when noise_var > 0")
        value += rng.normal(0.0, np.sqrt(noise_var))
    return float(value)


def ttk_encode(blue_survived: bool, sim_time: float, t_max: float = T_MAX_DEFAULT) -> float:
    """Fold engagement time onto [0, 2*t_max]: survival keeps the clock value,
    elimination reflects it above t_max so later losses score less badly."""
    if not 0.0 <= sim_time <= t_max:
        raise DomainError(f"sim_time {sim_time} outside [0, {t_max}]")
    if blue_survived:
        return float(sim_time)
    return float(2.0 * t_max - sim_time)


# Fixed backbone constants for the synthetic engagement stand-in: two low-value
# basins at low intercept speed and moderate launch delay, a logistic ramp to a
# high plateau at high intercept speed, and noise spread growing with speed.
# These are code-level fixtures, not estimates of any real simulator.
_TTK_RAMP_BASE = 160.0
_TTK_RAMP_GAIN = 420.0
_TTK_RAMP_MID = 250.0
_TTK_RAMP_WIDTH = 35.0
_TTK_BASIN1 = {"depth": 130.0, "launch": 2.6, "launch_w": 0.9, "speed": 125.0, "speed_w": 70.0}
_TTK_BASIN2 = {"depth": 95.0, "launch": 1.2, "launch_w": 0.7, "speed": 60.0, "speed_w": 55.0}
_TTK_NOISE_FLOOR = 5.0
_TTK_NOISE_GAIN = 45.0


def synthetic_ttk_backbone(launch, intspeed):
    """Deterministic engagement-time surface; vectorized over numpy inputs."""
    launch = np.asarray(launch, dtype=float)
    intspeed = np.asarray(intspeed, dtype=float)
    ramp = _TTK_RAMP_BASE + _TTK_RAMP_GAIN / (1.0 + np.exp(-(intspeed - _TTK_RAMP_MID) / _TTK_RAMP_WIDTH))
    value = ramp
    for basin in (_TTK_BASIN1, _TTK_BASIN2):
        value = value - basin["depth"] * np.exp(
            -(((launch - basin["launch"]) / basin["launch_w"]) ** 2)
            - ((intspeed - basin["speed"]) / basin["speed_w"]) ** 2
        )
    return value


def synthetic_ttk_noise_sd(intspeed):
    intspeed = np.asarray(intspeed, dtype=float)
    return _TTK_NOISE_FLOOR + _TTK_NOISE_GAIN * (np.clip(intspeed, 0.0, 500.0) / 500.0) ** 1.5


def synthetic_ttk(launch: float, intspeed: float, rng: np.random.Generator) -> float:
    """Volatile stand-in for a two-parameter engagement objective.

    Heteroscedastic Gaussian noise on the fixed backbone, clamped to
    [0, 600]; the clamp mildly truncates the noise at the plateau.
    """
    if not 0.0 <= launch <= 5.0:
        raise DomainError(f"launch {launch} outside [0, 5]")
    if not 0.0 <= intspeed <= 500.0:
        raise DomainError(f"intspeed {intspeed} outside [0, 500]")
    value = float(synthetic_ttk_backbone(launch, intspeed))
    value += rng.normal(0.0, float(synthetic_ttk_noise_sd(intspeed)))
    return float(np.clip(value, 0.0, SYNTHETIC_TTK_CAP))


def synthetic_ttk_mesh_minimizer(resolution: int = 1000):
    """Brute-force minimizer of the noise-free backbone over a dense mesh."""
    launch = np.linspace(0.0, 5.0, resolution)
    speed = np.linspace(0.0, 500.0, resolution)
    L, S = np.meshgrid(launch, speed, indexing="ij")
    values = synthetic_ttk_backbone(L, S)
    idx = np.unravel_index(np.argmin(values), values.shape)
    return np.array([L[idx], S[idx]]), float(values[idx])


def _ackley_space(dims: int) -> SearchSpace:
    if dims == 3:
        return SearchSpace(lower=ACKLEY3_LOWER, upper=ACKLEY3_UPPER, names=("x1", "x2", "x3"))
    return SearchSpace(
        lower=np.full(dims, -32.768),
        upper=np.full(dims, 32.768),
        names=tuple(f"x{i + 1}" for i in range(dims)),
    )


def make_objective(name: str, noise_var: float = 0.0, dims: int | None = None, command=None) -> NoisyObjective:
    """Objectives addressable by name from experiment configs."""
    if name == "ackley3" or (name == "ackley" and (dims or 3) == 3):
        space = _ackley_space(3)
        return NoisyObjective(
            name="ackley3",
            space=space,
            evaluate=lambda x, rng: ackley(x, noise_var, rng),
            optimum_x=np.zeros(3),
            optimum_value=0.0,
        )
    if name == "ackley":
        space = _ackley_space(dims or 2)
        return NoisyObjective(
            name=name,
            space=space,
            evaluate=lambda x, rng: ackley(x, noise_var, rng),
            optimum_x=np.zeros(space.dims),
            optimum_value=0.0,
        )
    if name == "forrester":
        space = SearchSpace(lower=[0.0], upper=[1.0], names=("x",))
        return NoisyObjective(
            name=name,
            space=space,
            evaluate=lambda x, rng: forrester(x, noise_var, rng),
            optimum_x=np.array([0.757249]),
            optimum_value=-6.020740,
        )
    if name == "synthetic_ttk":
        space = SearchSpace(lower=[0.0, 0.0], upper=[5.0, 500.0], names=("launch", "intspeed"))
        minimizer, value = synthetic_ttk_mesh_minimizer(resolution=400)
        return NoisyObjective(
            name=name,
            space=space,
            evaluate=lambda x, rng: synthetic_ttk(x[0], x[1], rng),
            optimum_x=minimizer,
            optimum_value=value,
        )
    if name == "external":
        if not command:
            raise DomainError("external objective needs a command")
        return subprocess_objective(command, dims=dims or 1)
    raise DomainError(f"unknown objective {name!r}")


# --- external objective protocol ------------------------------------------
#
# Request:  one JSON line {"x": [coordinates...], "stream": <int>}
# Response: one line holding the scalar value (JSON number)
#
# The stream id is derived deterministically from the per-evaluation
# generator, so an external server that seeds its own noise from the id keeps
# runs reproducible.


def serve_objective(objective: NoisyObjective, stdin, stdout) -> None:
    """Serve evaluations over file handles; one request per line, EOF ends."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        x = np.asarray(request["x"], dtype=float)
        rng = np.random.default_rng(int(request["stream"]))
        value = objective(x, rng)
        stdout.write(json.dumps(value) + "\n")
        stdout.flush()


class SubprocessObjective:
    """Client for an external process serving the line protocol."""

    def __init__(self, command, dims: int, space: SearchSpace | None = None, name: str = "external"):
        self.name = name
        self.space = space or SearchSpace(lower=np.zeros(dims), upper=np.ones(dims))
        self._proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    @property
    def dims(self) -> int:
        return self.space.dims

    def __call__(self, x, rng: np.random.Generator) -> float:
        return self.evaluate(x, rng)

    def evaluate(self, x, rng: np.random.Generator) -> float:
        stream = int(rng.integers(0, 2**63 - 1))
        request = {"x": np.asarray(x, dtype=float).tolist(), "stream": stream}
        self._proc.stdin.write(json.dumps(request) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError("external objective closed its output")
        return float(json.loads(line))

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def subprocess_objective(command, dims: int, space: SearchSpace | None = None) -> NoisyObjective:
    client = SubprocessObjective(command, dims=dims, space=space)
    return NoisyObjective(
        name="external", space=client.space, evaluate=lambda x, rng: client.evaluate(x, rng)
    )
