"""Shared fixture: one real solver run whose artifacts feed every test.

The solver CLI's `all` subcommand is driven once per session on a small
but admissible grid (with the long-horizon sub-run enabled, so the
horizon-comparison preset has its input).  The figures package itself
never imports the solver — the run directory of CSV files is the whole
interface — and the tests consume it the same way.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

RUN_CONFIG = {
    "preset": "paper2016",
    "grid": {"n_s": 77, "n_q": 9, "n_nu": 11, "n_t": 25},
    "extract": {"degrees": [4, 4, 5, 4]},
    "simulation": {"n_paths": 8, "dt": 0.01},
    "filter_demo": {"dt": 0.001, "horizon": 1.0},
    "horizon3": {
        "enabled": True, "T": 3.0, "s_min": -55.0, "s_max": 135.0,
        "n_s": 31, "n_q": 5, "n_nu": 5, "n_t": 16,
    },
}


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory) -> Path:
    from storagecontrol.cli import main as solver_main

    base = tmp_path_factory.mktemp("solver_run")
    cfg = base / "config.json"
    cfg.write_text(json.dumps(RUN_CONFIG))
    code = solver_main([
        "all", "--config", str(cfg), "--seed", "1",
        "--out", str(base), "--run-name", "study",
    ])
    assert code == 0, "solver run failed; figures tests need its artifacts"
    return base / "study"
