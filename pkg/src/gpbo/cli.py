"""Experiment runner CLI: run, summarize, snapshot, validate-config.

Exit codes: 0 success, 1 partial run failures, 2 config error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
from pathlib import Path

from . import __version__
from .acquisition import AcquisitionSpec, acquisition_surface
from .config import ExperimentConfig, derive_run_seed, parse_config
from .direct import DirectBudget
from .engine import RunHistory, SamplingPlan, run_gpbo
from .errors import ConfigError, GpboError
from .evaluation import fit_ground_truth, grid_mesh, summarize_runs, surface_table
from .engine import substream


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_writer(path: Path):
    """Context: write to a sibling temp file, rename into place on success."""

    class _Ctx:
        def __enter__(self):
            self.tmp = path.with_name(path.name + ".tmp")
            self.fh = open(self.tmp, "w", newline="")
            return self.fh

        def __exit__(self, exc_type, *exc):
            self.fh.close()
            if exc_type is None:
                os.replace(self.tmp, path)
            else:
                self.tmp.unlink(missing_ok=True)

    return _Ctx()


def run_label(acquisition: str, repeats: int, batch: int) -> str:
    return f"{acquisition}_rs{repeats}_ms{batch}"


def _plan_for(config: ExperimentConfig, acquisition: str, repeats: int, batch: int) -> SamplingPlan:
    return SamplingPlan(
        repeats=repeats,
        batch_size=batch,
        acquisition=AcquisitionSpec(
            family=acquisition,
            batch_size=batch,
            ucb_beta=config.ucb_beta,
            ts_grid_size=config.ts_grid_size,
        ),
    )


def _execute_run(config: ExperimentConfig, combo, out_root: str, max_evals_override: int | None) -> dict:
    """Run one (acquisition, rs, ms, repetition) cell and write its artifacts."""
    acquisition, repeats, batch, repetition = combo
    label = run_label(acquisition, repeats, batch)
    seed = derive_run_seed(config.master_seed, acquisition, repeats, batch, repetition)
    run_dir = Path(out_root) / "runs" / label / f"rep{repetition:02d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    entry = {
        "label": label,
        "acquisition": acquisition,
        "rs": repeats,
        "ms": batch,
        "repetition": repetition,
        "seed": seed,
        "dir": str(run_dir.relative_to(out_root)),
    }
    try:
        objective = config.build_objective()
        termination = config.termination
        if max_evals_override is not None:
            termination = type(termination)(
                max_iterations=termination.max_iterations,
                max_evaluations=max_evals_override,
                max_wall_seconds=termination.max_wall_seconds,
                x_tolerance=termination.x_tolerance,
                y_tolerance=termination.y_tolerance,
            )
        history = run_gpbo(
            space=objective.space,
            objective=objective,
            plan=_plan_for(config, acquisition, repeats, batch),
            seed_design_size=config.seed_design_size or 10 * objective.space.dims,
            priors=config.priors,
            termination=termination,
            seed=seed,
            map_restarts=config.engine.map_restarts,
            initial_map_restarts=config.engine.initial_map_restarts,
            direct_budget=DirectBudget(max_evals=config.engine.direct_evals_per_dim * objective.space.dims),
            ard=config.engine.ard,
            use_marginalized_acquisition=config.engine.marginalized_acquisition,
        )
        csv_tmp = run_dir / "history.csv.tmp"
        history.to_csv(csv_tmp)
        os.replace(csv_tmp, run_dir / "history.csv")
        jsonl_tmp = run_dir / "history.jsonl.tmp"
        history.to_jsonl(jsonl_tmp)
        os.replace(jsonl_tmp, run_dir / "history.jsonl")
        entry["status"] = "failed" if history.failed else "ok"
        if history.failed:
            entry["error"] = history.error
        else:
            entry["termination_reason"] = history.termination_reason
    except Exception as err:  # sibling runs continue
        entry["status"] = "failed"
        entry["error"] = f"{type(err).__name__}: {err}"
    return entry


def run_experiment(config_path, out_dir=None, jobs: int = 1, max_evals_override: int | None = None) -> int:
    """Run the full config matrix; returns the process exit code."""
    config = parse_config(config_path)
    out_root = Path(out_dir or config.output_directory or "runs")
    out_root.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_root / "config.snapshot.ini", config.config_text)

    combos = list(config.combos())
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_run_cell, [(config, combo, str(out_root), max_evals_override) for combo in combos]))
    else:
        entries = [_execute_run(config, combo, str(out_root), max_evals_override) for combo in combos]

    manifest = {
        "tool_version": __version__,
        "config_hash": config.config_hash(),
        "master_seed": config.master_seed,
        "experiment": config.name,
        "runs": entries,
    }
    _atomic_write_text(out_root / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 1 if any(e["status"] != "ok" for e in entries) else 0


def _run_cell(packed):
    return _execute_run(*packed)


def _load_config_histories(out_root: Path):
    """(repetition, history) pairs grouped by configuration label."""
    manifest = json.loads((out_root / "manifest.json").read_text())
    groups: dict[str, list[tuple[int, RunHistory]]] = {}
    for entry in manifest["runs"]:
        if entry["status"] != "ok":
            continue
        history = RunHistory.from_jsonl(out_root / entry["dir"] / "history.jsonl")
        groups.setdefault(entry["label"], []).append((entry["repetition"], history))
    return manifest, groups


def summarize_experiment(config_path, out_dir) -> int:
    """Fidelity/outcome summaries for a completed experiment directory."""
    config = parse_config(config_path)
    out_root = Path(out_dir)
    manifest, groups = _load_config_histories(out_root)
    if not groups:
        print("no successful runs to summarize", file=sys.stderr)
        return 1

    objective = config.build_objective()
    truth = fit_ground_truth(
        objective,
        objective.space,
        n_samples=config.ground_truth.samples,
        rng=substream(config.master_seed, "ground-truth"),
        mesh_size=config.ground_truth.mesh_size,
        restarts=config.ground_truth.restarts,
        priors=config.priors,
    )

    summaries = {
        label: summarize_runs([h for _, h in pairs], truth, label=label)
        for label, pairs in sorted(groups.items())
    }

    per_run_path = out_root / "summary.csv"
    with _atomic_writer(per_run_path) as fh:
        writer = csv.writer(fh)
        dim_names = objective.space.dim_names()
        writer.writerow(["label", "acquisition", "rs", "ms", "repetition", *(f"final_{n}" for n in dim_names),
                        "final_y", "sse_mean", "sse_sigma", "evals", "wall_seconds"])
        for label, pairs in sorted(groups.items()):
            summary = summaries[label]
            for i, (repetition, history) in enumerate(pairs):
                writer.writerow([
                    label,
                    history.plan.acquisition.family,
                    history.plan.repeats,
                    history.plan.batch_size,
                    repetition,
                    *map(repr, map(float, summary.final_x[i])),
                    repr(summary.final_y[i]),
                    repr(summary.sse_mean_values[i]),
                    repr(summary.sse_sigma_values[i]),
                    summary.evals[i],
                    repr(summary.wall_seconds[i]),
                ])

    stats_path = out_root / "summary_stats.csv"
    with _atomic_writer(stats_path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "acquisition", "rs", "ms", "runs", "median_final_y", "iqr_final_y",
                        "variance_final_y", "median_sse_mean", "median_sse_sigma"])
        for label, pairs in sorted(groups.items()):
            summary = summaries[label]
            plan = pairs[0][1].plan
            writer.writerow([
                label, plan.acquisition.family, plan.repeats, plan.batch_size, summary.n_runs,
                repr(summary.median_final_y),
                "" if summary.iqr_final_y is None else repr(summary.iqr_final_y),
                "" if summary.variance_final_y is None else repr(summary.variance_final_y),
                repr(summary.median_sse_mean), repr(summary.median_sse_sigma),
            ])

    # box-plot source data, one file per configuration
    for label, pairs in sorted(groups.items()):
        summary = summaries[label]
        with _atomic_writer(out_root / f"boxplot_{label}.csv") as fh:
            writer = csv.writer(fh)
            writer.writerow(["repetition", "final_y", "sse_mean", "sse_sigma"])
            for i, (repetition, _) in enumerate(pairs):
                writer.writerow([repetition, repr(summary.final_y[i]), repr(summary.sse_mean_values[i]),
                                repr(summary.sse_sigma_values[i])])
    print(f"wrote {per_run_path} and {stats_path}")
    return 0


def _parse_mesh_spec(spec: str, dims: int) -> int:
    parts = [p for p in spec.lower().replace("x", " ").split() if p]
    counts = [int(p) for p in parts]
    if len(counts) == 1:
        return counts[0]
    if len(counts) != dims or len(set(counts)) != 1:
        raise ConfigError(f"mesh spec {spec!r} does not fit a {dims}-dimensional run (use N or NxN with equal N)")
    return counts[0]


def export_snapshot(run_dir, mesh_spec: str = "50", out_path=None, acquisition: str | None = None) -> int:
    """Refit the final surrogate from a stored history and export its surface.

    With ``acquisition`` set (ei or ucb) an extra column holds the acquisition
    surface over the same mesh, for acquisition-landscape figures.
    """
    run_dir = Path(run_dir)
    jsonl = run_dir / "history.jsonl"
    if not jsonl.exists():
        print(f"no history at {jsonl}", file=sys.stderr)
        return 1
    history = RunHistory.from_jsonl(jsonl)
    model = history.final_model()
    per_dim = _parse_mesh_spec(mesh_spec, history.space.dims)
    mesh = grid_mesh(history.space, per_dim)
    pts, mean, sd = surface_table(model, history.space, mesh)
    acq_values = None
    if acquisition is not None:
        spec = AcquisitionSpec(family=acquisition, ucb_beta=history.plan.acquisition.ucb_beta)
        acq_values = acquisition_surface(
            model, spec, float(history.incumbent_y), history.space.to_unit(mesh),
            iteration=max(history.iterations, 1),
        )
    out_path = Path(out_path) if out_path else run_dir / "surface.csv"
    with _atomic_writer(out_path) as fh:
        writer = csv.writer(fh)
        header = [*history.space.dim_names(), "mu", "sigma"]
        if acq_values is not None:
            header.append("acquisition")
        writer.writerow(header)
        for i, (row, m, s) in enumerate(zip(pts, mean, sd)):
            fields = [*map(repr, map(float, row)), repr(float(m)), repr(float(s))]
            if acq_values is not None:
                fields.append(repr(float(acq_values[i])))
            writer.writerow(fields)
    print(f"wrote {out_path}")
    return 0


def validate_config(config_path) -> int:
    try:
        config = parse_config(config_path)
    except (ConfigError, OSError) as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2
    n_runs = len(list(config.combos()))
    print(f"ok: {config.name}, {n_runs} runs "
          f"({len(config.acquisitions)} acquisitions x RS{config.rs_list} x MS{config.ms_list} "
          f"x {config.repetitions} repetitions)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gpbo", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run the config's experiment matrix")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default from config)")
    p_run.add_argument("--jobs", type=int, default=1, help="max concurrent runs")
    p_run.add_argument("--max-evals", type=int, default=None, help="override termination.max_evaluations")

    p_sum = sub.add_parser("summarize", help="summarize a completed experiment directory")
    p_sum.add_argument("--config", required=True)
    p_sum.add_argument("--out", required=True, help="experiment directory holding manifest.json")

    p_snap = sub.add_parser("snapshot", help="export a run's final surrogate surface")
    p_snap.add_argument("--run", required=True, help="run directory holding history.jsonl")
    p_snap.add_argument("--mesh", default="50", help="mesh spec, e.g. 50 or 50x50")
    p_snap.add_argument("--out", default=None, help="output CSV path")
    p_snap.add_argument("--acquisition", default=None, choices=["ei", "ucb"],
                        help="add an acquisition-surface column")

    p_val = sub.add_parser("validate-config", help="parse and check a config file")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    try:
        if args.verb == "run":
            return run_experiment(args.config, out_dir=args.out, jobs=args.jobs, max_evals_override=args.max_evals)
        if args.verb == "summarize":
            return summarize_experiment(args.config, args.out)
        if args.verb == "snapshot":
            return export_snapshot(args.run, mesh_spec=args.mesh, out_path=args.out, acquisition=args.acquisition)
        if args.verb == "validate-config":
            return validate_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except GpboError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
