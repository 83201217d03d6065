"""Command-line pipeline: config ingestion, solve/extract/check/simulate/
evaluate orchestration, and artifact persistence.

Each subcommand is a pure function of (config, seed): it recomputes the
stages it depends on and writes its artifacts into a fresh run directory
`<out>/<subcommand>_<timestamp>/` (override the directory name with
--run-name).  File contents never embed times, so identical config and
seed reproduce byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 solver failure
(diagnostics in solver_failure.json), 4 admissibility check failed
during `all`.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts
from .barriers import (
    check_mixed_derivative,
    check_nonparallelity,
    classification_agreement,
    extract_barriers,
    smooth_barriers,
)
from .evaluate import estimate_J, simulate_controlled_path
from .filtering import simulate_truth_and_filter
from .grid import Grid4D
from .hjb import SolverError, SolverOptions, backward_solve
from .params import ModelParams, PRESETS, preset
from .sde_transform import simulate_transformed, spec_from_config, storage_system_spec

__all__ = ["RunConfig", "ConfigError", "load_config", "run", "main"]

SUBCOMMANDS = ("solve", "extract", "check", "simulate", "evaluate", "filter-demo", "all")

_GRID_DEFAULTS = {
    "s_min": -100.0,
    "s_max": 200.0,
    "n_s": 151,
    "n_q": 41,
    "n_nu": 21,
    "n_t": 200,
}
_SOLVER_DEFAULTS = {"policy_iterations": 1, "tolerance": 1e-8}
_EXTRACT_DEFAULTS = {"degrees": [6, 6, 8, 6]}
_SIM_DEFAULTS = {
    "n_paths": 2000,
    "dt": 1e-3,
    "starts": [[40.0, 50.0, 0.5, 0.0]],
    "scheme": "both",
    "antithetic": True,
    "dump_paths": False,
    "n_dump_paths": 3,
    "test_problem": None,
    "horizon": None,
}
_FILTER_DEFAULTS = {"dt": 1e-3, "horizon": None}
_HORIZON3_DEFAULTS = {
    "enabled": True,
    "T": 3.0,
    "s_min": -100.0,
    "s_max": 200.0,
    "n_s": 77,
    "n_q": 21,
    "n_nu": 11,
    "n_t": 91,
}


class ConfigError(ValueError):
    """Configuration problem, carrying the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at '{path}': {message}")
        self.path = path


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration: validated model parameters plus the
    grid/solver/extract/simulation sections and run-level flags."""

    params: ModelParams
    grid: dict
    solver: SolverOptions
    extract: dict
    simulation: dict
    filter_demo: dict
    horizon3: dict
    out_dir: Path
    seed: int
    threads: int
    run_name: str | None
    echo: dict


def _merge_section(cfg: dict, name: str, defaults: dict) -> dict:
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(name, f"must be an object, got {type(section).__name__}")
    out = dict(defaults)
    for key, val in section.items():
        if key not in defaults:
            raise ConfigError(f"{name}.{key}", "unknown field")
        out[key] = val
    return out


def _need_number(section: dict, name: str, key: str, positive=False, integer=False):
    val = section[key]
    if val is None:
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{name}.{key}", f"must be a number, got {val!r}")
    if integer and int(val) != val:
        raise ConfigError(f"{name}.{key}", f"must be an integer, got {val!r}")
    if positive and val <= 0:
        raise ConfigError(f"{name}.{key}", f"must be positive, got {val!r}")
    return int(val) if integer else float(val)


def load_config(
    config_path: str | None,
    preset_name: str | None,
    seed: int,
    threads: int,
    out_dir: str,
    run_name: str | None = None,
) -> RunConfig:
    """Read and validate the JSON config, falling back to the embedded
    defaults (model: the two-regime preset) for anything omitted."""
    cfg: dict = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError("--config", f"invalid JSON: {e}")
        if not isinstance(cfg, dict):
            raise ConfigError("--config", "top level must be an object")

    known_top = {"model", "preset", "grid", "solver", "extract", "simulation",
                 "filter_demo", "horizon3"}
    for key in cfg:
        if key not in known_top:
            raise ConfigError(key, "unknown section")

    name = preset_name or cfg.get("preset")
    if "model" in cfg:
        if not isinstance(cfg["model"], dict):
            raise ConfigError("model", "must be an object of model parameter fields")
        try:
            params = ModelParams.from_dict(cfg["model"])
        except (TypeError, ValueError) as e:
            raise ConfigError("model", str(e))
    else:
        name = name or "paper2016"
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; available: {sorted(PRESETS)}")
        params = preset(name)

    grid = _merge_section(cfg, "grid", _GRID_DEFAULTS)
    for key in ("s_min", "s_max"):
        grid[key] = _need_number(grid, "grid", key)
    for key in ("n_s", "n_q", "n_nu", "n_t"):
        grid[key] = _need_number(grid, "grid", key, positive=True, integer=True)
    if grid["s_min"] >= grid["s_max"]:
        raise ConfigError("grid.s_min", "must be below grid.s_max")

    solver_raw = _merge_section(cfg, "solver", _SOLVER_DEFAULTS)
    try:
        solver = SolverOptions(
            policy_iterations=_need_number(
                solver_raw, "solver", "policy_iterations", positive=True, integer=True
            ),
            tolerance=_need_number(solver_raw, "solver", "tolerance", positive=True),
        )
    except ValueError as e:
        raise ConfigError("solver", str(e))

    extract = _merge_section(cfg, "extract", _EXTRACT_DEFAULTS)
    degrees = extract["degrees"]
    if (
        not isinstance(degrees, (list, tuple))
        or len(degrees) != 4
        or any(not isinstance(d, int) for d in degrees)
        or any(d < 1 for d in degrees[:3])
        or degrees[3] < 0
    ):
        raise ConfigError(
            "extract.degrees",
            "must be four integers [deg_q, deg_nu, deg_t, n_layer] with the first three >= 1"
            " and n_layer >= 0",
        )
    extract["degrees"] = tuple(degrees)

    sim = _merge_section(cfg, "simulation", _SIM_DEFAULTS)
    sim["n_paths"] = _need_number(sim, "simulation", "n_paths", positive=True, integer=True)
    sim["dt"] = _need_number(sim, "simulation", "dt", positive=True)
    sim["n_dump_paths"] = _need_number(sim, "simulation", "n_dump_paths", positive=True, integer=True)
    sim["horizon"] = _need_number(sim, "simulation", "horizon", positive=True)
    if sim["scheme"] not in ("plain", "transformed", "both"):
        raise ConfigError("simulation.scheme", f"must be plain|transformed|both, got {sim['scheme']!r}")
    starts = sim["starts"]
    if not isinstance(starts, list) or not starts:
        raise ConfigError("simulation.starts", "must be a non-empty list of [s, q, nu1, t]")
    for i, st in enumerate(starts):
        if not isinstance(st, (list, tuple)) or len(st) != 4:
            raise ConfigError(f"simulation.starts[{i}]", "must be [s, q, nu1, t]")
        s_, q_, n_, t_ = (float(v) for v in st)
        if not params.q_lo <= q_ <= params.q_hi:
            raise ConfigError(f"simulation.starts[{i}]", f"q={q_} outside [{params.q_lo}, {params.q_hi}]")
        if not 0.0 <= n_ <= 1.0:
            raise ConfigError(f"simulation.starts[{i}]", f"nu1={n_} outside [0, 1]")
        if not 0.0 <= t_ <= params.T:
            raise ConfigError(f"simulation.starts[{i}]", f"t={t_} outside [0, {params.T}]")
    if sim["test_problem"] is not None and not isinstance(sim["test_problem"], dict):
        raise ConfigError("simulation.test_problem", "must be an object")

    filt = _merge_section(cfg, "filter_demo", _FILTER_DEFAULTS)
    filt["dt"] = _need_number(filt, "filter_demo", "dt", positive=True)
    filt["horizon"] = _need_number(filt, "filter_demo", "horizon", positive=True)

    h3 = _merge_section(cfg, "horizon3", _HORIZON3_DEFAULTS)
    if not isinstance(h3["enabled"], bool):
        raise ConfigError("horizon3.enabled", "must be a boolean")
    h3["T"] = _need_number(h3, "horizon3", "T", positive=True)
    for key in ("s_min", "s_max"):
        h3[key] = _need_number(h3, "horizon3", key)
    for key in ("n_s", "n_q", "n_nu", "n_t"):
        h3[key] = _need_number(h3, "horizon3", key, positive=True, integer=True)

    echo = {
        "model": params.to_dict(),
        "grid": grid,
        "solver": dataclasses.asdict(solver),
        "extract": {"degrees": list(extract["degrees"])},
        "simulation": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sim.items()},
        "filter_demo": filt,
        "horizon3": h3,
        "seed": seed,
        "threads": threads,
    }
    return RunConfig(
        params=params,
        grid=grid,
        solver=solver,
        extract=extract,
        simulation=sim,
        filter_demo=filt,
        horizon3=h3,
        out_dir=Path(out_dir),
        seed=seed,
        threads=threads,
        run_name=run_name,
        echo=echo,
    )


# -- pipeline stages ----------------------------------------------------------


def _stage_solve(cfg: RunConfig, params: ModelParams | None = None, grid_dict: dict | None = None):
    p = params or cfg.params
    gd = grid_dict or cfg.grid
    grid = Grid4D.make(
        p,
        s_min=gd["s_min"],
        s_max=gd["s_max"],
        n_s=gd["n_s"],
        n_q=gd["n_q"],
        n_nu=gd["n_nu"],
        n_t=gd["n_t"],
    )
    return backward_solve(p, grid, cfg.solver)


def _stage_extract(cfg: RunConfig, policy, params: ModelParams | None = None):
    raw = extract_barriers(policy)
    smoothed = smooth_barriers(raw, params or cfg.params, degrees=cfg.extract["degrees"])
    return raw, smoothed


def _stage_checks(cfg: RunConfig, value, policy, smoothed) -> dict:
    checks = {
        "mixed_derivative": check_mixed_derivative(value),
        "nonparallelity": check_nonparallelity(smoothed),
        "classification_agreement": classification_agreement(policy, smoothed),
        "barrier_fit_max_deviation": smoothed.max_fit_deviation,
        "solver_diagnostics": value.diagnostics,
    }
    checks["admissible"] = bool(
        checks["mixed_derivative"]["min_margin"] > 0.0
        and checks["nonparallelity"]["min_margin"] > 0.0
    )
    return checks


def _stage_evaluate(cfg: RunConfig, value, smoothed):
    sim = cfg.simulation
    schemes = ["plain", "transformed"] if sim["scheme"] == "both" else [sim["scheme"]]
    reports = []
    for scheme in schemes:
        reports.append(
            estimate_J(
                cfg.params,
                smoothed,
                sim["starts"],
                n_paths=sim["n_paths"],
                dt=sim["dt"],
                seed=cfg.seed,
                scheme=scheme,
                antithetic=sim["antithetic"],
                threads=cfg.threads,
                value=value,
            )
        )
    return reports


def _run_dir(cfg: RunConfig, subcommand: str) -> Path:
    name = cfg.run_name or f"{subcommand}_{time.strftime('%Y%m%dT%H%M%SZ', time.gmtime())}"
    d = cfg.out_dir / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def run(subcommand: str, cfg: RunConfig) -> int:
    """Execute one subcommand; artifacts land in a fresh run directory."""
    if subcommand not in SUBCOMMANDS:
        print(f"unknown subcommand: {subcommand}", file=sys.stderr)
        return 2
    run_dir = _run_dir(cfg, subcommand)
    try:
        status = _dispatch(subcommand, cfg, run_dir)
    except SolverError as e:
        artifacts._write_json(
            run_dir / "solver_failure.json",
            {"error": str(e), "diagnostics": getattr(e, "diagnostics", None)},
        )
        artifacts.write_manifest(run_dir, subcommand, cfg.echo)
        print(f"solver failure: {e}\ndiagnostics: {run_dir / 'solver_failure.json'}", file=sys.stderr)
        return 3
    artifacts.write_manifest(run_dir, subcommand, cfg.echo)
    print(run_dir)
    return status


def _dispatch(subcommand: str, cfg: RunConfig, run_dir: Path) -> int:
    if subcommand == "solve":
        value, policy = _stage_solve(cfg)
        artifacts.write_value_policy(run_dir, value, policy)
        return 0

    if subcommand == "extract":
        value, policy = _stage_solve(cfg)
        raw, smoothed = _stage_extract(cfg, policy)
        artifacts.write_barriers(run_dir, raw, smoothed)
        return 0

    if subcommand == "check":
        value, policy = _stage_solve(cfg)
        raw, smoothed = _stage_extract(cfg, policy)
        checks = _stage_checks(cfg, value, policy, smoothed)
        artifacts.write_checks(run_dir, checks)
        return 0

    if subcommand == "filter-demo":
        filt = cfg.filter_demo
        horizon = filt["horizon"] or cfg.params.T
        paths = simulate_truth_and_filter(
            cfg.params, horizon=horizon, dt=filt["dt"], seed=cfg.seed
        )
        artifacts.write_filter_paths(run_dir, paths)
        return 0

    if subcommand == "simulate":
        sim = cfg.simulation
        if sim["test_problem"] is not None:
            spec = spec_from_config(sim["test_problem"])
            horizon = sim["horizon"] or 1.0
            tp = simulate_transformed(spec, horizon=horizon, dt=sim["dt"], seed=cfg.seed)
            artifacts.write_transform_path(run_dir, tp)
            return 0
        value, policy = _stage_solve(cfg)
        raw, smoothed = _stage_extract(cfg, policy)
        schemes = ["plain", "transformed"] if sim["scheme"] == "both" else [sim["scheme"]]
        specs = storage_system_spec(cfg.params, smoothed) if "transformed" in schemes else None
        paths = []
        for scheme in schemes:
            for i in range(sim["n_dump_paths"]):
                paths.append(
                    simulate_controlled_path(
                        cfg.params,
                        smoothed,
                        sim["starts"][i % len(sim["starts"])],
                        dt=sim["dt"],
                        seed=cfg.seed + i,
                        scheme=scheme,
                        specs=specs,
                    )
                )
        artifacts.write_controlled_paths(run_dir, paths)
        return 0

    if subcommand == "evaluate":
        value, policy = _stage_solve(cfg)
        raw, smoothed = _stage_extract(cfg, policy)
        reports = _stage_evaluate(cfg, value, smoothed)
        artifacts.write_evaluation(run_dir, reports)
        if cfg.simulation["dump_paths"]:
            paths = [
                simulate_controlled_path(
                    cfg.params, smoothed, cfg.simulation["starts"][0],
                    dt=cfg.simulation["dt"], seed=cfg.seed + i, scheme="plain",
                )
                for i in range(cfg.simulation["n_dump_paths"])
            ]
            artifacts.write_controlled_paths(run_dir, paths)
        return 0

    # all: the full pipeline, failing fast on admissibility
    value, policy = _stage_solve(cfg)
    artifacts.write_value_policy(run_dir, value, policy)
    raw, smoothed = _stage_extract(cfg, policy)
    artifacts.write_barriers(run_dir, raw, smoothed)
    checks = _stage_checks(cfg, value, policy, smoothed)
    artifacts.write_checks(run_dir, checks)
    if not checks["admissible"]:
        print(
            "admissibility check failed: "
            f"min |V_sq - 1| = {checks['mixed_derivative']['min_margin']:.3e}, "
            f"min non-parallelity margin = {checks['nonparallelity']['min_margin']:.3e}",
            file=sys.stderr,
        )
        return 4

    filt = cfg.filter_demo
    paths = simulate_truth_and_filter(
        cfg.params, horizon=filt["horizon"] or cfg.params.T, dt=filt["dt"], seed=cfg.seed
    )
    artifacts.write_filter_paths(run_dir, paths)

    reports = _stage_evaluate(cfg, value, smoothed)
    artifacts.write_evaluation(run_dir, reports)

    if cfg.horizon3["enabled"]:
        h3 = cfg.horizon3
        params3 = dataclasses.replace(cfg.params, T=h3["T"])
        value3, policy3 = _stage_solve(cfg, params=params3, grid_dict=h3)
        raw3, smoothed3 = _stage_extract(cfg, policy3, params=params3)
        sub = run_dir / "horizon3"
        sub.mkdir(exist_ok=True)
        artifacts.write_value_policy(sub, value3, policy3)
        artifacts.write_barriers(sub, raw3, smoothed3)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="storagecontrol",
        description=(
            "Finite-horizon storage control under a filtered regime-switching "
            "price: solve the HJB equation, extract and check threshold "
            "policies, and evaluate them by simulation."
        ),
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config file (sections: model/preset, grid, solver, extract, simulation, filter_demo, horizon3)")
    parser.add_argument("--preset", help="named parameter preset (e.g. paper2016); ignored when the config has a model section")
    parser.add_argument("--seed", type=int, default=0, help="master seed for all randomized stages")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for parallel path batches")
    parser.add_argument("--out", default="runs", help="parent directory for run artifacts")
    parser.add_argument("--run-name", default=None, help="run directory name (default: <subcommand>_<timestamp>)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(
            args.config, args.preset, args.seed, args.threads, args.out, args.run_name
        )
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2
    try:
        return run(args.subcommand, cfg)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
