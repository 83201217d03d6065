"""Regime inference from observed prices.

The regime Y is never observed; only the price path is.  The conditional
regime distribution pi_t (the innovations-filter state) solves

    d pi^i = (L^T pi)^i dt + pi^i * (a(S, e_i, t) - a_hat) / sigma dB_t,

where a(s, e_i, t) = kappa * (mu_i + K(t) - s) is the full-information
price drift in regime i, a_hat = sum_i pi^i a(s, e_i, t) its conditional
mean, L the regime rate matrix, and B the innovation Brownian motion
dB = (dS - a_hat dt) / sigma.  Replacing the unobserved drift by a_hat
makes (S, pi) a closed Markov system driven by B alone.

This module provides the drift/step primitives, exact simulation of the
regime chain, and joint simulation of truth (S, Y) plus filter pi for
validation studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .params import ModelParams, seasonality

__all__ = [
    "SIMPLEX_EPS",
    "conditional_drift",
    "filter_step",
    "project_simplex",
    "RegimePath",
    "simulate_regime",
    "TruthFilterPaths",
    "simulate_truth_and_filter",
]

# Discrete steps can push pi slightly outside the simplex; components are
# clamped to [SIMPLEX_EPS, 1] and renormalized after every step.
SIMPLEX_EPS = 1e-9


def conditional_drift(s, pi, t, params: ModelParams):
    """Price drift given the filtered regime distribution:
    kappa * (<mu, pi> + K(t) - s).

    `pi` may carry leading batch axes; its last axis must have length D.
    """
    pi = np.asarray(pi, dtype=float)
    s = np.asarray(s, dtype=float)
    if pi.shape[-1] != params.D:
        raise ValueError(f"pi must have {params.D} components on the last axis")
    mean_mu = pi @ params.mu_arr
    val = params.kappa * (mean_mu + seasonality(t, params) - s)
    return float(val) if np.ndim(val) == 0 else val


def project_simplex(pi: np.ndarray) -> np.ndarray:
    """Clamp components to [SIMPLEX_EPS, 1] and renormalize to sum one."""
    pi = np.clip(pi, SIMPLEX_EPS, 1.0)
    return pi / pi.sum(axis=-1, keepdims=True)


def filter_step(pi, s, t, dB, dt, params: ModelParams):
    """One Euler step of the filter SDE followed by simplex projection.

    Vectorized: `pi` of shape (..., D) with broadcastable `s`, `dB`.
    """
    pi = np.asarray(pi, dtype=float)
    dB = np.asarray(dB, dtype=float)
    s = np.asarray(s, dtype=float)
    L = params.rate_matrix_arr
    mu = params.mu_arr
    mean_mu = (pi @ mu)[..., None]
    # a(s, e_i, t) - a_hat = kappa * (mu_i - <mu, pi>); the seasonal and
    # price terms cancel in the difference.
    gain = pi * (params.kappa * (mu - mean_mu) / params.sigma)
    drift = pi @ L  # (L^T pi)_i as a row-vector product
    out = pi + drift * dt + gain * dB[..., None]
    return project_simplex(out)


# -- regime chain -------------------------------------------------------


@dataclass(frozen=True)
class RegimePath:
    """Piecewise-constant regime trajectory: jump epochs and visited states.

    times[0] = 0 holds the initial state; times[k] is the k-th jump epoch.
    The path is right-continuous and defined up to `horizon`.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon + 1e-12):
            raise ValueError("query time outside [0, horizon]")
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = self.states[idx]
        return int(out) if out.ndim == 0 else out

    def occupation_fraction(self, state: int) -> float:
        """Fraction of [0, horizon] spent in `state`."""
        edges = np.append(self.times, self.horizon)
        lengths = np.diff(edges)
        return float(lengths[self.states == state].sum() / self.horizon)


def simulate_regime(params: ModelParams, horizon: float, seed, y0: int | None = None) -> RegimePath:
    """Exact continuous-time Markov chain sample on [0, horizon].

    Holding time in state i is Exp(-L_ii); on a jump the next state j is
    drawn with probability L_ij / (-L_ii).  An absorbing state (zero row)
    holds forever.  y0 defaults to a draw from nu0.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    L = params.rate_matrix_arr
    D = params.D
    if y0 is None:
        y = int(rng.choice(D, p=np.asarray(params.nu0)))
    else:
        if not 0 <= y0 < D:
            raise ValueError(f"y0 must be a state index in [0, {D})")
        y = int(y0)
    times = [0.0]
    states = [y]
    t = 0.0
    while True:
        rate = -L[y, y]
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        probs = L[y].copy()
        probs[y] = 0.0
        probs /= rate
        y = int(rng.choice(D, p=probs))
        times.append(t)
        states.append(y)
    return RegimePath(np.asarray(times), np.asarray(states, dtype=np.int64), float(horizon))


# -- joint truth + filter simulation -------------------------------------


@dataclass(frozen=True)
class TruthFilterPaths:
    """Batch of jointly simulated (S, Y, pi) paths on a uniform grid.

    t: (n_steps+1,); S, Y: (n_paths, n_steps+1); pi: (n_paths, n_steps+1, D).
    """

    t: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    pi: np.ndarray


def simulate_truth_and_filter(
    params: ModelParams,
    horizon: float,
    dt: float,
    seed,
    n_paths: int = 1,
    s0: float | None = None,
    y0: int | None = None,
    brownian_increments: np.ndarray | None = None,
) -> TruthFilterPaths:
    """Simulate the true regime and price jointly with the filter.

    Y is sampled with the exact one-step transition kernel expm(L*dt) (a
    distributionally exact skeleton of the chain on the grid), S by Euler
    under the true regime drift a(S, Y, t), and pi by `filter_step` driven
    by the innovation increments dB = (dS - a_hat dt) / sigma.

    `brownian_increments` (shape (n_paths, n_steps)) overrides the price
    noise; pass zeros for a noise-free check.  y0 pins the initial regime
    for every path; otherwise initial regimes are drawn from nu0.
    """
    if dt <= 0.0 or horizon <= 0.0:
        raise ValueError("horizon and dt must be positive")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be an integer multiple of dt")
    rng = np.random.default_rng(seed)
    D = params.D
    mu = params.mu_arr
    if s0 is None:
        s0 = float(mu.mean())

    P = expm(params.rate_matrix_arr * dt)  # exact one-step regime kernel
    P_cum = np.cumsum(P, axis=1)

    if brownian_increments is None:
        dW = rng.standard_normal((n_paths, n_steps)) * np.sqrt(dt)
    else:
        dW = np.asarray(brownian_increments, dtype=float)
        if dW.shape != (n_paths, n_steps):
            raise ValueError(f"brownian_increments must have shape {(n_paths, n_steps)}")

    t = np.linspace(0.0, horizon, n_steps + 1)
    S = np.empty((n_paths, n_steps + 1))
    Y = np.empty((n_paths, n_steps + 1), dtype=np.int64)
    pi = np.empty((n_paths, n_steps + 1, D))

    S[:, 0] = s0
    if y0 is None:
        Y[:, 0] = rng.choice(D, size=n_paths, p=np.asarray(params.nu0))
    else:
        Y[:, 0] = int(y0)
    pi[:, 0, :] = np.asarray(params.nu0, dtype=float)

    uniforms = rng.random((n_paths, n_steps))
    for n in range(n_steps):
        s_n = S[:, n]
        y_n = Y[:, n]
        K_n = seasonality(float(t[n]), params)
        a_true = params.kappa * (mu[y_n] + K_n - s_n)
        dS = a_true * dt + params.sigma * dW[:, n]
        S[:, n + 1] = s_n + dS
        a_hat = params.kappa * ((pi[:, n, :] @ mu) + K_n - s_n)
        dB = (dS - a_hat * dt) / params.sigma
        pi[:, n + 1, :] = filter_step(pi[:, n, :], s_n, float(t[n]), dB, dt, params)
        Y[:, n + 1] = _sample_rows(P_cum, y_n, uniforms[:, n])
    return TruthFilterPaths(t=t, S=S, Y=Y, pi=pi)


def _sample_rows(P_cum: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized categorical draw: for each k, sample from row rows[k] of the
    cumulative kernel P_cum using uniform u[k]."""
    cum = P_cum[rows]  # (n, D)
    return (u[:, None] > cum).sum(axis=1)
