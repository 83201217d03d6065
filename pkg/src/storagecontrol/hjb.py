"""Backward dynamic-programming solve of the storage control problem.

For the two-regime case the state reduces to (s, q, nu, t) with nu the
filtered probability of the high-price regime.  The value function
solves, backward from the scrap condition V(., T) = Phi,

    V_t + a_hat V_s + (1/2) sigma^2 V_ss
        + m(nu) V_nu + (1/2) r(nu)^2 V_nunu + sigma r(nu) V_snu
        - rho V + max_u [ u V_q + F(s, q, u) ] = 0,

with a_hat = kappa (mu_bar(nu) + K(t) - s), filter drift
m(nu) = L11 nu - L22 (1 - nu), and filter diffusion
r(nu) = (kappa/sigma) (mu_1 - mu_2) nu (1 - nu); both second-order
coefficients are the ones generated by the reduced Markov system, so the
s-nu cross coefficient is the full sigma*r(nu).

Because F is piecewise linear in u with a kink only at 0, the inner
maximum is always attained at u_max(q), 0, or u_min(q), and the argmax is
a pure price-threshold rule (see `pointwise_control`).

Discretization: one semi-Lagrangian/implicit sweep per time step —
inventory advection by tracing the controlled characteristic to the
later slice (monotone linear interpolation, clamped to the inventory
range, which realizes reflection at the bounds), price drift/diffusion
implicit via one tridiagonal solve per (q, nu) line (central weighting
where the M-matrix property allows, upwind otherwise, V_ss = 0 at the
price edges), the nu-direction and cross terms explicit from the later
slice, and discounting by the exact factor exp(-rho dt).  The explicit
terms carry a stability bound on dt; when the requested output grid is
coarser, the solver sub-steps internally and stores the requested slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .grid import Grid4D, Mode, PolicyField, ValueField
from .params import ModelParams, rate_bounds, running_reward, seasonality, terminal_reward

__all__ = [
    "SolverError",
    "SolverOptions",
    "pointwise_control",
    "backward_solve",
    "mixed_derivative_field",
]

_SUBSTEP_SAFETY = 0.9


class SolverError(RuntimeError):
    """Raised when the backward solve cannot be completed as configured."""


@dataclass(frozen=True)
class SolverOptions:
    """policy_iterations: control/value fixed-point sweeps per time step
    (1 = single sweep, the default); tolerance: relative value-change
    threshold that counts as converged when iterating.

    The re-sweep recomputes the threshold control from the latest value,
    which flips the mode of cells whose price sits within O(dt) of a
    threshold.  Those cells support a small persistent two-cycle, so the
    iteration settles only for tolerances above that cycle's amplitude
    (order dt * h_q in value units); far tighter tolerances make the
    solve fail with SolverError rather than loop silently."""

    policy_iterations: int = 1
    tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if self.policy_iterations < 1:
            raise ValueError("policy_iterations must be >= 1")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")


def pointwise_control(s, q, Vq, params: ModelParams):
    """Threshold argmax of u*Vq + F(s, q, u) over the admissible rates.

    Buy at full rate when s <= Vq - d_plus, sell at full rate when
    s >= Vq + d_minus, wait in between.  The two can fire together only
    when d_plus + d_minus = 0; the tie resolves to Sell.  Returns
    (mode, rate) with broadcast shape.
    """
    s, q, Vq = np.broadcast_arrays(
        np.asarray(s, dtype=float), np.asarray(q, dtype=float), np.asarray(Vq, dtype=float)
    )
    buy = s <= Vq - params.d_plus
    sell = s >= Vq + params.d_minus
    mode = np.where(sell, Mode.SELL, np.where(buy, Mode.BUY, Mode.WAIT)).astype(np.int8)
    u_min, u_max = rate_bounds(q, params)
    rate = np.where(mode == Mode.SELL, u_min, np.where(mode == Mode.BUY, u_max, 0.0))
    if mode.ndim == 0:
        return int(mode), float(rate)
    return mode, rate


# -- discrete operators ---------------------------------------------------


def _explicit_nu_terms(W: np.ndarray, g: Grid4D, m_nu: np.ndarray, rho_nu: np.ndarray,
                       sigma: float) -> np.ndarray:
    """Filter-direction part of the generator applied to a slice W:
    m(nu) W_nu (upwind) + 1/2 r(nu)^2 W_nunu + sigma r(nu) W_snu.

    The diffusion and cross coefficients vanish at nu in {0, 1}; the
    drift points into [0, 1] there, so one-sided differences never need
    exterior nodes.
    """
    h = g.h_nu
    out = np.zeros_like(W)

    # second difference, interior nu only (coefficient is 0 at the edges)
    out[:, :, 1:-1] += (0.5 * rho_nu[1:-1] ** 2 / h**2) * (
        W[:, :, 2:] - 2.0 * W[:, :, 1:-1] + W[:, :, :-2]
    )

    # upwind first difference in nu
    fwd = np.empty_like(W)
    fwd[:, :, :-1] = (W[:, :, 1:] - W[:, :, :-1]) / h
    fwd[:, :, -1] = fwd[:, :, -2]  # unused when m(1) <= 0
    bwd = np.empty_like(W)
    bwd[:, :, 1:] = (W[:, :, 1:] - W[:, :, :-1]) / h
    bwd[:, :, 0] = bwd[:, :, 1]  # unused when m(0) >= 0
    out += m_nu * np.where(m_nu > 0.0, fwd, bwd)

    # cross term: central nu-difference then s-gradient (one-sided at s edges)
    dWdnu = np.zeros_like(W)
    dWdnu[:, :, 1:-1] = (W[:, :, 2:] - W[:, :, :-2]) / (2.0 * h)
    cross = np.gradient(dWdnu, g.h_s, axis=0)
    out += (sigma * rho_nu) * cross
    return out


def _price_line_matrices(g: Grid4D, a_drift: np.ndarray, sigma: float, dt: float) -> list:
    """Banded matrices I - dt*L_s, one per nu, for the implicit price step.

    a_drift has shape (n_s, n_nu).  L_s uses central weighting where the
    resulting M-matrix property holds (|a| <= sigma^2 / h) and upwind
    elsewhere; at the price edges the diffusion is dropped (V_ss = 0) and
    the drift is one-sided into the domain.
    """
    n_s, n_nu = a_drift.shape
    h = g.h_s
    Dc = 0.5 * sigma * sigma
    mats = []
    for k in range(n_nu):
        a = a_drift[:, k]
        lower = np.zeros(n_s)  # coefficient of V_{i-1} in L, row i
        diag = np.zeros(n_s)
        upper = np.zeros(n_s)  # coefficient of V_{i+1} in L, row i

        central = np.abs(a) <= sigma * sigma / h
        up_pos = (~central) & (a > 0.0)
        up_neg = (~central) & (a <= 0.0)

        lower[central] = Dc / h**2 - a[central] / (2.0 * h)
        upper[central] = Dc / h**2 + a[central] / (2.0 * h)
        diag[central] = -2.0 * Dc / h**2

        lower[up_pos] = Dc / h**2
        upper[up_pos] = Dc / h**2 + a[up_pos] / h
        diag[up_pos] = -2.0 * Dc / h**2 - a[up_pos] / h

        lower[up_neg] = Dc / h**2 - a[up_neg] / h
        upper[up_neg] = Dc / h**2
        diag[up_neg] = -2.0 * Dc / h**2 + a[up_neg] / h

        # boundary rows: no diffusion, advection one-sided into the domain
        lower[0] = 0.0
        upper[0] = a[0] / h
        diag[0] = -a[0] / h
        upper[-1] = 0.0
        lower[-1] = -a[-1] / h
        diag[-1] = a[-1] / h

        ab = np.zeros((3, n_s))
        ab[0, 1:] = -dt * upper[:-1]
        ab[1, :] = 1.0 - dt * diag
        ab[2, :-1] = -dt * lower[1:]
        mats.append(ab)
    return mats


def _foot_weights(q: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower index and lower-node weight for linear interpolation at the
    clamped characteristic feet q + u*dt."""
    qf = np.clip(q + u * dt, q[0], q[-1])
    h = q[1] - q[0]
    idx = np.clip(((qf - q[0]) // h).astype(int), 0, q.size - 2)
    w = (q[idx + 1] - qf) / h
    return idx, np.clip(w, 0.0, 1.0)


def _gather_q(B: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Interpolate B (n_s, n_q, n_nu) along q at per-column feet."""
    return w[None, :, None] * B[:, idx, :] + (1.0 - w[None, :, None]) * B[:, idx + 1, :]


def _dVdq(W: np.ndarray, h_q: float) -> np.ndarray:
    """Central-difference inventory derivative, one-sided at the q edges."""
    return np.gradient(W, h_q, axis=1)


def backward_solve(
    params: ModelParams,
    grid: Grid4D,
    options: SolverOptions | None = None,
) -> tuple[ValueField, PolicyField]:
    """Solve the dynamic program on `grid`; returns the value and the
    recorded threshold policy (argmax mode at every node).

    Raises SolverError for non-2-regime parameter sets, and when an
    enabled control/value fixed-point iteration fails to settle.
    """
    if params.D != 2:
        raise SolverError("the grid solver covers the reduced two-regime state only")
    options = options or SolverOptions()

    s, q, nu, t = grid.s, grid.q, grid.nu, grid.t
    n_s, n_q, n_nu, n_t = grid.shape
    if abs(t[-1] - params.T) > 1e-9 * max(1.0, params.T):
        raise SolverError(f"time axis must end at T={params.T}, got {t[-1]}")

    mu1, mu2 = params.mu
    L = params.rate_matrix_arr
    mu_bar = mu1 * nu + mu2 * (1.0 - nu)
    rho_nu = (params.kappa / params.sigma) * (mu1 - mu2) * nu * (1.0 - nu)
    m_nu = L[0, 0] * nu - L[1, 1] * (1.0 - nu)

    # stability bound for the explicit filter-direction terms
    explicit_rate = (
        np.max(rho_nu**2) / grid.h_nu**2
        + np.max(np.abs(m_nu)) / grid.h_nu
        + params.sigma * np.max(rho_nu) / (grid.h_s * grid.h_nu)
    )
    dt_out = grid.dt
    dt_stable = _SUBSTEP_SAFETY / explicit_rate if explicit_rate > 0.0 else np.inf
    substeps = max(1, int(math.ceil(dt_out / dt_stable)))
    dt = dt_out / substeps

    disc = math.exp(-params.rho * dt)
    u_min_q, u_max_q = rate_bounds(q, params)
    idx_buy, w_buy = _foot_weights(q, u_max_q, dt)
    idx_sell, w_sell = _foot_weights(q, u_min_q, dt)

    F_buy = running_reward(s[:, None], q[None, :], u_max_q[None, :], params)
    F_sell = running_reward(s[:, None], q[None, :], u_min_q[None, :], params)
    F_wait = running_reward(s[:, None], q[None, :], np.zeros((1, n_q)), params)

    time_dependent = params.seasonality is not None

    def drift_at(tt: float) -> np.ndarray:
        return params.kappa * (mu_bar[None, :] + seasonality(tt, params) - s[:, None])

    mats_cache = None if time_dependent else _price_line_matrices(grid, drift_at(0.0), params.sigma, dt)

    sg = s[:, None, None]
    F_sel_buy = F_buy[:, :, None]
    F_sel_sell = F_sell[:, :, None]
    F_sel_wait = F_wait[:, :, None]

    def sweep(B: np.ndarray, V_ctrl: np.ndarray, mats: list) -> np.ndarray:
        """One policy-improvement sweep: choose the control from V_ctrl,
        assemble the semi-Lagrangian right-hand side from B, solve the
        implicit price systems."""
        Vq = _dVdq(V_ctrl, grid.h_q)
        buy = sg <= Vq - params.d_plus
        sell = sg >= Vq + params.d_minus
        cont = np.where(
            sell, _gather_q(B, idx_sell, w_sell), np.where(buy, _gather_q(B, idx_buy, w_buy), B)
        )
        reward = np.where(sell, F_sel_sell, np.where(buy, F_sel_buy, F_sel_wait))
        rhs = disc * cont + dt * reward
        out = np.empty_like(B)
        for k in range(n_nu):
            out[:, :, k] = solve_banded((1, 1), mats[k], rhs[:, :, k])
        return out

    V = np.empty(grid.shape)
    V[..., -1] = terminal_reward(s[:, None], q[None, :], params)[:, :, None]

    iteration_rounds = 0
    for n in range(n_t - 2, -1, -1):
        Vcur = V[..., n + 1]
        for m in range(substeps):
            t_new = t[n + 1] - (m + 1) * dt  # time of the slice being computed
            mats = mats_cache if mats_cache is not None else _price_line_matrices(
                grid, drift_at(t_new), params.sigma, dt
            )
            B = Vcur + dt * _explicit_nu_terms(Vcur, grid, m_nu, rho_nu, params.sigma)
            Vnew = sweep(B, Vcur, mats)
            if options.policy_iterations > 1:
                for it in range(1, options.policy_iterations):
                    iteration_rounds += 1
                    Vret = sweep(B, Vnew, mats)
                    change = float(np.max(np.abs(Vret - Vnew)))
                    Vnew = Vret
                    if change <= options.tolerance * max(1.0, float(np.max(np.abs(Vnew)))):
                        break
                else:
                    raise SolverError(
                        "control/value iteration did not settle: "
                        f"last change {change:.3e} after {options.policy_iterations} sweeps "
                        f"at t={t_new:.6f} (tolerance {options.tolerance:.1e})"
                    )
            Vcur = Vnew
        V[..., n] = Vcur

    mode = np.empty(grid.shape, dtype=np.int8)
    for n in range(n_t):
        Vq = _dVdq(V[..., n], grid.h_q)
        mode[..., n], _ = pointwise_control(sg, q[None, :, None], Vq, params)

    diagnostics = {
        "substeps_per_output_step": substeps,
        "dt_internal": dt,
        "dt_stability_bound": dt_stable,
        "explicit_rate": float(explicit_rate),
        "policy_iteration_rounds": iteration_rounds,
    }
    value = ValueField(grid=grid, V=V, diagnostics=diagnostics)
    policy = PolicyField(grid=grid, mode=mode, params=params)
    return value, policy


def mixed_derivative_field(value: ValueField) -> np.ndarray:
    """Finite-difference d^2 V / ds dq on the full grid (central inside,
    one-sided at the s and q edges)."""
    Vs = np.gradient(value.V, value.grid.h_s, axis=0)
    return np.gradient(Vs, value.grid.h_q, axis=1)
