"""Shared fixtures: the reference parameter set, a fast reduced-grid
solve for module tests, and the full default-grid solve shared by the
slow checks (built once per session, only when requested)."""

import numpy as np
import pytest

import storagecontrol as sc

REDUCED_GRID = dict(s_min=-55.0, s_max=135.0, n_s=77, n_q=9, n_nu=11, n_t=25)
REDUCED_DEGREES = (4, 4, 5, 4)


@pytest.fixture(scope="session")
def params():
    return sc.preset("paper2016")


@pytest.fixture(scope="session")
def reduced_solution(params):
    grid = sc.Grid4D.make(params, **REDUCED_GRID)
    value, policy = sc.backward_solve(params, grid)
    return value, policy


@pytest.fixture(scope="session")
def reduced_barriers(params, reduced_solution):
    _, policy = reduced_solution
    raw = sc.extract_barriers(policy)
    smoothed = sc.smooth_barriers(raw, params, degrees=REDUCED_DEGREES)
    return raw, smoothed


@pytest.fixture(scope="session")
def default_solution(params):
    grid = sc.Grid4D.make(params)
    value, policy = sc.backward_solve(params, grid)
    return value, policy


@pytest.fixture(scope="session")
def default_barriers(params, default_solution):
    _, policy = default_solution
    raw = sc.extract_barriers(policy)
    smoothed = sc.smooth_barriers(raw, params)
    return raw, smoothed


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
