"""Artifact persistence: CSV/JSON outputs with stable names and contents.

Every writer here is deterministic — given the same inputs it produces
byte-identical files.  Floats are serialized with `repr` (shortest
round-trip form), JSON objects with sorted keys, and nothing
time-dependent goes inside a file; run directories carry the timestamp
in their *name* instead.  The manifest lists the configuration echo,
library versions, and a sha256 checksum of every artifact in the run
directory so downstream consumers can verify what they read.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .barriers import BarrierField, SmoothedBarriers
from .evaluate import ControlledPath, EvaluationReport
from .filtering import TruthFilterPaths
from .grid import PolicyField, ValueField
from .sde_transform import TransformPath

__all__ = [
    "write_value_policy",
    "write_barriers",
    "write_checks",
    "write_filter_paths",
    "write_evaluation",
    "write_controlled_paths",
    "write_transform_path",
    "write_manifest",
    "sha256_file",
]


def _fmt(x) -> str:
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _write_json(path: Path, obj) -> Path:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON-serializable: {type(o)}")


def write_value_policy(run_dir: Path, value: ValueField, policy: PolicyField) -> list[Path]:
    """value_policy_t0.csv: long-format t=0 slice (s,q,nu1,t,V,mode,rate);
    value_policy_mid.csv: the same long format over (s,t) at the grid nodes
    nearest to half-full storage and nu1 = 1/2 (the time evolution of the
    central price column); value_policy.npz: the full arrays for reload."""
    g = value.grid
    rate = policy.rate()
    header = ["s", "q", "nu1", "t", "V", "mode", "rate"]
    rows = (
        (
            g.s[i],
            g.q[j],
            g.nu[k],
            g.t[0],
            value.V[i, j, k, 0],
            int(policy.mode[i, j, k, 0]),
            rate[i, j, k, 0],
        )
        for i in range(g.s.size)
        for j in range(g.q.size)
        for k in range(g.nu.size)
    )
    csv_path = _write_csv(run_dir / "value_policy_t0.csv", header, rows)
    j_mid = int(np.argmin(np.abs(g.q - 0.5 * (g.q[0] + g.q[-1]))))
    k_mid = int(np.argmin(np.abs(g.nu - 0.5)))
    mid_rows = (
        (
            g.s[i],
            g.q[j_mid],
            g.nu[k_mid],
            g.t[n],
            value.V[i, j_mid, k_mid, n],
            int(policy.mode[i, j_mid, k_mid, n]),
            rate[i, j_mid, k_mid, n],
        )
        for i in range(g.s.size)
        for n in range(g.t.size)
    )
    mid_path = _write_csv(run_dir / "value_policy_mid.csv", header, mid_rows)
    npz_path = run_dir / "value_policy.npz"
    np.savez_compressed(
        npz_path,
        s=g.s,
        q=g.q,
        nu=g.nu,
        t=g.t,
        V=value.V,
        mode=policy.mode,
        rate=rate,
    )
    return [csv_path, mid_path, npz_path]


def write_barriers(
    run_dir: Path,
    raw: BarrierField,
    smoothed: SmoothedBarriers | None = None,
    name: str = "barriers.csv",
) -> list[Path]:
    """barriers.csv: raw threshold levels per (q, nu1, t) node with the
    non-threshold flag, plus the smoothed levels when available;
    barrier_fit.json: the polynomial coefficients of the smooth fit."""
    g = raw.grid
    out = [run_dir / name]
    qs, nus, ts = g.q, g.nu, g.t
    flags = (
        raw.non_threshold
        if raw.non_threshold is not None
        else np.zeros(raw.buy_level.shape, dtype=bool)
    )
    if smoothed is not None:
        qg, ng, tg = np.meshgrid(qs, nus, ts, indexing="ij")
        sb = np.asarray(smoothed.buy(qg, ng, tg), dtype=float)
        ss = np.asarray(smoothed.sell(qg, ng, tg), dtype=float)

    def rows():
        for j in range(qs.size):
            for k in range(nus.size):
                for m in range(ts.size):
                    row = [
                        qs[j],
                        nus[k],
                        ts[m],
                        raw.buy_level[j, k, m],
                        raw.sell_level[j, k, m],
                        int(flags[j, k, m]),
                    ]
                    if smoothed is not None:
                        row += [sb[j, k, m], ss[j, k, m]]
                    yield row

    header = ["q", "nu1", "t", "buy_level", "sell_level", "non_threshold"]
    if smoothed is not None:
        header += ["smooth_buy", "smooth_sell"]
    _write_csv(out[0], header, rows())
    if smoothed is not None:
        fit_path = run_dir / "barrier_fit.json"
        _write_json(
            fit_path,
            {
                "degrees": list(smoothed.degrees),
                "coef_buy": smoothed.coef_buy,
                "coef_sell": smoothed.coef_sell,
                "max_fit_deviation": smoothed.max_fit_deviation,
            },
        )
        out.append(fit_path)
    return out


def write_checks(run_dir: Path, checks: dict) -> Path:
    return _write_json(run_dir / "checks.json", checks)


def write_filter_paths(run_dir: Path, paths: TruthFilterPaths) -> Path:
    """filter_paths.csv: t, S, Y, pi_1..pi_D (first path of the batch)."""
    D = paths.pi.shape[-1]
    S = paths.S if paths.S.ndim == 1 else paths.S[0]
    Y = paths.Y if paths.Y.ndim == 1 else paths.Y[0]
    pi = paths.pi if paths.pi.ndim == 2 else paths.pi[0]
    rows = (
        [paths.t[i], S[i], int(Y[i])] + [pi[i, d] for d in range(D)]
        for i in range(paths.t.size)
    )
    return _write_csv(
        run_dir / "filter_paths.csv",
        ["t", "S", "Y"] + [f"pi_{d + 1}" for d in range(D)],
        rows,
    )


def write_evaluation(run_dir: Path, reports: list[EvaluationReport]) -> list[Path]:
    """evaluation.csv: one row per (start, scheme); evaluation.json: the
    same plus run metadata."""
    header = [
        "s",
        "q",
        "nu1",
        "t",
        "scheme",
        "n_paths",
        "mean",
        "standard_error",
        "grid_value",
    ]

    def rows():
        for rep in reports:
            for r in rep.rows():
                yield [
                    r["s"],
                    r["q"],
                    r["nu1"],
                    r["t"],
                    r["scheme"],
                    r["n_paths"],
                    r["mean"],
                    r["standard_error"],
                    r.get("grid_value", ""),
                ]

    csv_path = _write_csv(run_dir / "evaluation.csv", header, rows())
    json_path = _write_json(
        run_dir / "evaluation.json",
        [
            {
                "rows": rep.rows(),
                "dt": rep.dt,
                "seed": rep.seed,
                "antithetic": rep.antithetic,
                "scheme": rep.scheme,
            }
            for rep in reports
        ],
    )
    return [csv_path, json_path]


def write_controlled_paths(run_dir: Path, paths: list[ControlledPath]) -> Path:
    """paths.csv: one row per step per path (the terminal state appears as
    a final row with empty control fields)."""

    def rows():
        for p_idx, p in enumerate(paths):
            n = p.mode.size
            for i in range(n):
                yield [
                    p_idx,
                    p.t[i],
                    p.S[i],
                    p.Q[i],
                    p.nu[i],
                    int(p.mode[i]),
                    p.rate[i],
                    int(p.region[i]),
                ]
            yield [p_idx, p.t[n], p.S[n], p.Q[n], p.nu[n], "", "", ""]

    return _write_csv(
        run_dir / "paths.csv",
        ["path", "t", "S", "Q", "nu1", "mode", "rate", "region"],
        rows(),
    )


def write_transform_path(run_dir: Path, path: TransformPath) -> Path:
    """transform_path.csv: t, x_1..x_d, region flag."""
    d = path.x.shape[-1]
    x = path.x if path.x.ndim == 2 else path.x[:, 0, :]
    region = path.region if path.region.ndim == 1 else path.region[:, 0]
    rows = (
        [path.t[i]] + [x[i, j] for j in range(d)] + [int(region[i])]
        for i in range(path.t.size)
    )
    return _write_csv(
        run_dir / "transform_path.csv",
        ["t"] + [f"x_{j + 1}" for j in range(d)] + ["region"],
        rows,
    )


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: Path, subcommand: str, config_echo: dict) -> Path:
    """manifest.json at the run-dir root: inputs, versions, and a checksum
    for every artifact below the directory."""
    files = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[str(p.relative_to(run_dir))] = sha256_file(p)
    return _write_json(
        run_dir / "manifest.json",
        {
            "subcommand": subcommand,
            "config": config_echo,
            "versions": {
                "storagecontrol": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "files": files,
        },
    )
