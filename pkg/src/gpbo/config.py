"""Experiment config: flat INI-style text with typed sections.

The config fully determines an experiment: objective, sampling matrix
(acquisitions x repeat counts x batch sizes x repetitions), priors, budgets,
and the master seed. Hashing the canonical text plus the master seed pins
every output byte of the run histories.
"""

from __future__ import annotations

import configparser
import hashlib
import shlex
from dataclasses import dataclass, field

import numpy as np

from .acquisition import FAMILIES
from .engine import TerminationCriteria
from .errors import ConfigError
from .hyperlearn import Gaussian, HyperPriorSet, Uniform
from .objectives import make_objective
from .search_space import SearchSpace


@dataclass(frozen=True)
class EngineOptions:
    map_restarts: int = 3
    initial_map_restarts: int = 5
    direct_evals_per_dim: int = 500
    ard: bool = False
    marginalized_acquisition: bool = False


@dataclass(frozen=True)
class GroundTruthOptions:
    samples: int = 2000
    mesh_size: int = 2000
    restarts: int = 3


@dataclass
class ExperimentConfig:
    name: str
    master_seed: int
    repetitions: int
    objective_name: str
    objective_noise_var: float
    objective_dims: int | None
    objective_command: list[str] | None
    space_override: SearchSpace | None
    acquisitions: list[str]
    rs_list: list[int]
    ms_list: list[int]
    ucb_beta: float | str
    ts_grid_size: int | None
    seed_design_size: int | None
    priors: HyperPriorSet
    termination: TerminationCriteria
    engine: EngineOptions
    ground_truth: GroundTruthOptions
    output_directory: str | None
    config_text: str = field(repr=False, default="")

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("experiment.repetitions must be >= 1")
        for acq in self.acquisitions:
            if acq not in FAMILIES:
                raise ConfigError(f"sampling.acquisitions: unknown family {acq!r}")
        if any(l < 1 for l in self.rs_list) or any(m < 1 for m in self.ms_list):
            raise ConfigError("sampling.rs and sampling.ms must be positive integers")

    def config_hash(self) -> str:
        return hashlib.sha256(self.config_text.encode()).hexdigest()

    def build_objective(self):
        objective = make_objective(
            self.objective_name,
            noise_var=self.objective_noise_var,
            dims=self.objective_dims,
            command=self.objective_command,
        )
        if self.space_override is not None:
            objective = type(objective)(
                name=objective.name,
                space=self.space_override,
                evaluate=objective.evaluate,
                optimum_x=None,
                optimum_value=None,
            )
        return objective

    def combos(self):
        for acq in self.acquisitions:
            for l in self.rs_list:
                for m in self.ms_list:
                    for rep in range(self.repetitions):
                        yield acq, l, m, rep


def derive_run_seed(master_seed: int, acquisition: str, repeats: int, batch: int, repetition: int) -> int:
    text = f"{master_seed}|{acquisition}|rs={repeats}|ms={batch}|rep={repetition}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def _parse_int_list(raw: str, where: str) -> list[int]:
    try:
        return [int(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as err:
        raise ConfigError(f"{where}: expected integers, got {raw!r}") from err


def _parse_prior(raw: str, where: str):
    tokens = raw.split()
    if len(tokens) != 3:
        raise ConfigError(f"{where}: expected 'uniform LO HI' or 'gaussian MEAN VAR', got {raw!r}")
    kind, a, b = tokens
    try:
        a, b = float(a), float(b)
    except ValueError as err:
        raise ConfigError(f"{where}: non-numeric bound in {raw!r}") from err
    if kind == "uniform":
        if a >= b:
            raise ConfigError(f"{where}: uniform needs LO < HI")
        return Uniform(a, b)
    if kind == "gaussian":
        if b <= 0:
            raise ConfigError(f"{where}: gaussian needs VAR > 0")
        return Gaussian(a, b)
    raise ConfigError(f"{where}: unknown prior kind {kind!r}")


def _get(parser, section, option, fallback=None):
    if parser.has_option(section, option):
        return parser.get(section, option).strip()
    return fallback


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config parse error: {err}") from err

    def require(section, option):
        value = _get(parser, section, option)
        if value is None:
            raise ConfigError(f"missing required option [{section}] {option}")
        return value

    try:
        master_seed = int(require("experiment", "master_seed"))
        repetitions = int(_get(parser, "experiment", "repetitions", "1"))
        name = _get(parser, "experiment", "name", "experiment")

        objective_name = require("objective", "name")
        noise_var = float(_get(parser, "objective", "noise_var", "0.0"))
        dims_raw = _get(parser, "objective", "dims")
        dims = int(dims_raw) if dims_raw else None
        command_raw = _get(parser, "objective", "command")
        command = shlex.split(command_raw) if command_raw else None

        space_override = None
        if parser.has_section("space"):
            lower = [float(v) for v in require("space", "lower").replace(",", " ").split()]
            upper = [float(v) for v in require("space", "upper").replace(",", " ").split()]
            names_raw = _get(parser, "space", "names")
            names = tuple(n.strip() for n in names_raw.split(",")) if names_raw else None
            space_override = SearchSpace(lower=np.asarray(lower), upper=np.asarray(upper), names=names)

        acquisitions = [a.strip() for a in require("sampling", "acquisitions").split(",")]
        rs_list = _parse_int_list(require("sampling", "rs"), "[sampling] rs")
        ms_list = _parse_int_list(require("sampling", "ms"), "[sampling] ms")

        beta_raw = _get(parser, "acquisition", "ucb_beta", "2.0")
        ucb_beta = beta_raw if beta_raw == "schedule" else float(beta_raw)
        grid_raw = _get(parser, "acquisition", "ts_grid_size")
        ts_grid_size = int(grid_raw) if grid_raw else None

        seed_raw = _get(parser, "seed_design", "size")
        seed_design_size = int(seed_raw) if seed_raw else None

        priors = HyperPriorSet(
            noise_var=_parse_prior(_get(parser, "priors", "noise_var", "uniform -13.8 9.2"), "[priors] noise_var"),
            amplitude=_parse_prior(_get(parser, "priors", "amplitude", "uniform -9.2 13.8"), "[priors] amplitude"),
            length_scale=_parse_prior(_get(parser, "priors", "length_scale", "uniform -5.3 2.3"), "[priors] length_scale"),
            mean=_parse_prior(_get(parser, "priors", "mean", "gaussian 0 10000"), "[priors] mean"),
        )

        def opt_number(section, option, cast):
            raw = _get(parser, section, option)
            return cast(raw) if raw else None

        termination = TerminationCriteria(
            max_iterations=opt_number("termination", "max_iterations", int),
            max_evaluations=opt_number("termination", "max_evaluations", int),
            max_wall_seconds=opt_number("termination", "max_wall_seconds", float),
            x_tolerance=opt_number("termination", "x_tolerance", float),
            y_tolerance=opt_number("termination", "y_tolerance", float),
        )

        engine = EngineOptions(
            map_restarts=int(_get(parser, "engine", "map_restarts", "3")),
            initial_map_restarts=int(_get(parser, "engine", "initial_map_restarts", "5")),
            direct_evals_per_dim=int(_get(parser, "engine", "direct_evals_per_dim", "500")),
            ard=parser.getboolean("engine", "ard", fallback=False),
            marginalized_acquisition=parser.getboolean("engine", "marginalized_acquisition", fallback=False),
        )
        ground_truth = GroundTruthOptions(
            samples=int(_get(parser, "ground_truth", "samples", "2000")),
            mesh_size=int(_get(parser, "ground_truth", "mesh_size", "2000")),
            restarts=int(_get(parser, "ground_truth", "restarts", "3")),
        )
        output_directory = _get(parser, "output", "directory")
    except ConfigError:
        raise
    except (ValueError, configparser.Error) as err:
        raise ConfigError(f"config error: {err}") from err

    try:
        return ExperimentConfig(
            name=name,
            master_seed=master_seed,
            repetitions=repetitions,
            objective_name=objective_name,
            objective_noise_var=noise_var,
            objective_dims=dims,
            objective_command=command,
            space_override=space_override,
            acquisitions=acquisitions,
            rs_list=rs_list,
            ms_list=ms_list,
            ucb_beta=ucb_beta,
            ts_grid_size=ts_grid_size,
            seed_design_size=seed_design_size,
            priors=priors,
            termination=termination,
            engine=engine,
            ground_truth=ground_truth,
            output_directory=output_directory,
            config_text=text,
        )
    except (ConfigError, ValueError) as err:
        raise ConfigError(str(err)) from err


def parse_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
