"""Monte Carlo evaluation of threshold storage policies.

Paths of the design-measure system (price S, inventory Q, posterior
weight nu on the high-mean regime) are driven by a single Brownian
motion — the same innovation process drives S and nu, which is what the
filtered system prescribes.  The control is read off the smoothed
threshold surfaces each step (sell when S is at or above the sell level,
buy when at or below the buy level, wait between), the inventory moves
at the admissible ramped rate, and rewards accumulate with
left-endpoint discounting plus the discounted scrap value at the
horizon.

Two stepping schemes are offered.  "plain" is Euler-Maruyama throughout,
accepting the drift discontinuity at the thresholds.  "transformed"
detects when the price sits inside a noise-scale tube around the active
threshold (below the pasting level the buy surface is active, above it
the sell surface) and advances those paths through the
drift-straightening change of variables instead, stepping the
transformed process and mapping back; this removes the discontinuity
the scheme would otherwise step across and markedly improves per-path
accuracy near the thresholds, allowing smaller path budgets.

Randomness: path i draws its normals from its own counter-based stream
keyed by (seed, i), so results are reproducible and independent of
batch or thread partitioning.  With antithetic sampling, pair i runs the
increments +xi_i and -xi_i and averages the two payoffs into one sample.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .barriers import SmoothedBarriers
from .grid import Mode, ValueField
from .params import (
    ModelParams,
    rate_bounds,
    running_reward,
    seasonality,
    terminal_reward,
)
from .sde_transform import StorageSystemSpecs, _AffineEngine, storage_system_spec

__all__ = [
    "SystemState",
    "ControlledPath",
    "EvaluationReport",
    "simulate_controlled_path",
    "estimate_J",
]


@dataclass(frozen=True)
class SystemState:
    """A start point (price, inventory, posterior weight, time)."""

    s: float
    q: float
    nu1: float
    t: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.nu1 <= 1.0:
            raise ValueError("nu1 must lie in [0, 1]")


@dataclass(frozen=True)
class ControlledPath:
    """One simulated controlled trajectory.

    mode/rate describe the control applied on [t_i, t_{i+1}); region
    flags the steps advanced through the transformed dynamics (0 plain,
    1 tube).  discounted_reward is the full objective sample: running
    rewards plus scrap value, discounted to the start time.
    """

    t: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    nu: np.ndarray
    mode: np.ndarray
    rate: np.ndarray
    region: np.ndarray
    discounted_reward: float
    scheme: str


@dataclass(frozen=True)
class EvaluationReport:
    """Estimated objective per start point.

    standard_error is the sample standard error of the per-path (or
    per-antithetic-pair) objective samples; it is positive in any
    genuinely stochastic configuration with two or more samples, and
    collapses to zero only when the dynamics are degenerate (no noise
    reaching the state from the start point).  grid_value, when present,
    is the PDE solution interpolated at the same starts for comparison.
    """

    starts: tuple[SystemState, ...]
    n_paths: int
    mean: np.ndarray
    standard_error: np.ndarray
    dt: float
    seed: int
    scheme: str
    antithetic: bool
    grid_value: np.ndarray | None = None

    def rows(self) -> list[dict]:
        out = []
        for i, st in enumerate(self.starts):
            row = {
                "s": st.s,
                "q": st.q,
                "nu1": st.nu1,
                "t": st.t,
                "mean": float(self.mean[i]),
                "standard_error": float(self.standard_error[i]),
                "n_paths": self.n_paths,
                "scheme": self.scheme,
            }
            if self.grid_value is not None:
                row["grid_value"] = float(self.grid_value[i])
            out.append(row)
        return out


def _as_state(start) -> SystemState:
    if isinstance(start, SystemState):
        return start
    s, q, nu1, t = (float(v) for v in start)
    return SystemState(s=s, q=q, nu1=nu1, t=t)


def _dynamics(params: ModelParams):
    mu1, mu2 = params.mu
    L = params.rate_matrix_arr
    gain = params.kappa * (mu1 - mu2) / params.sigma

    def mbar(nu):
        return mu1 * nu + mu2 * (1.0 - nu)

    def m_nu(nu):
        return L[0, 0] * nu - L[1, 1] * (1.0 - nu)

    def rho_nu(nu):
        return gain * nu * (1.0 - nu)

    return mbar, m_nu, rho_nu


def _path_normals(seed: int, indices: np.ndarray, n_steps: int) -> np.ndarray:
    """(len(indices), n_steps) standard normals, one stream per path."""
    out = np.empty((indices.size, n_steps))
    for j, i in enumerate(indices):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, int(i)))))
        out[j] = rng.standard_normal(n_steps)
    return out


def _simulate_batch(
    params: ModelParams,
    barriers: SmoothedBarriers,
    start: SystemState,
    dt: float,
    normals: np.ndarray,
    scheme: str,
    specs: StorageSystemSpecs | None,
    record: bool = False,
    sigma_override: float | None = None,
):
    """Advance a batch of paths from `start` to the horizon.

    normals: (P, n_steps) standard normal draws.  Returns (J, paths)
    where J is the (P,) vector of discounted objective samples and paths
    is a dict of recorded arrays when record=True (else None).

    sigma_override replaces the volatility of the realized price path
    only (the filter gain and thresholds keep the model volatility);
    it exists for deterministic smoke configurations and is incompatible
    with the transformed scheme.
    """
    P, n_steps = normals.shape
    mbar, m_nu, rho_nu = _dynamics(params)
    sigma = params.sigma if sigma_override is None else float(sigma_override)
    if sigma_override is not None and scheme == "transformed":
        raise ValueError("sigma_override applies to the plain scheme only")

    if scheme == "transformed":
        eng_buy = _AffineEngine(specs.buy)
        eng_sell = _AffineEngine(specs.sell)

    S = np.full(P, start.s)
    Q = np.full(P, start.q)
    nu = np.full(P, start.nu1)
    t0 = start.t
    J = np.zeros(P)

    if record:
        rec = {
            "t": np.empty(n_steps + 1),
            "S": np.empty((n_steps + 1, P)),
            "Q": np.empty((n_steps + 1, P)),
            "nu": np.empty((n_steps + 1, P)),
            "mode": np.zeros((n_steps, P), dtype=np.int8),
            "rate": np.zeros((n_steps, P)),
            "region": np.zeros((n_steps, P), dtype=np.int8),
        }
        rec["t"][0] = t0
        rec["S"][0], rec["Q"][0], rec["nu"][0] = S, Q, nu

    t = t0
    for i in range(n_steps):
        h = min(dt, params.T - t)
        dB = normals[:, i] * math.sqrt(h)
        b_buy = np.asarray(barriers.buy(Q, nu, t), dtype=float)
        b_sell = np.asarray(barriers.sell(Q, nu, t), dtype=float)
        u_min, u_max = rate_bounds(Q, params)

        sell = S >= b_sell
        buy = (~sell) & (S <= b_buy)
        u = np.where(sell, u_min, np.where(buy, u_max, 0.0))
        mode = np.where(sell, Mode.SELL, np.where(buy, Mode.BUY, Mode.WAIT))

        Q_new = np.clip(Q + u * h, params.q_lo, params.q_hi)
        u_eff = (Q_new - Q) / h
        S_new = S + params.kappa * (mbar(nu) + seasonality(t, params) - S) * h + sigma * dB
        nu_new = np.clip(nu + m_nu(nu) * h + rho_nu(nu) * dB, 0.0, 1.0)
        in_tube = np.zeros(P, dtype=bool)

        if scheme == "transformed":
            gamma = 0.5 * (b_buy + b_sell)
            for which, eng, level in (
                ("buy", eng_buy, b_buy),
                ("sell", eng_sell, b_sell),
            ):
                active = (S < gamma) if which == "buy" else (S >= gamma)
                if not np.any(active):
                    continue
                x1 = S - level
                y_tan = np.stack([Q, nu], axis=1)
                data = eng.spec.affine_data(y_tan, t)
                r_tube = 2.0 * np.sqrt(data["c"] * h)
                sel = active & (np.abs(x1) <= r_tube)
                if not np.any(sel):
                    continue
                idx = np.nonzero(sel)[0]
                side = np.where(x1[idx] != 0.0, np.sign(x1[idx]), 1.0)
                z, drift, diffusion = eng.drift_diffusion(
                    x1[idx], y_tan[idx], t, side
                )
                z_new = z + drift * h + diffusion * dB[idx, None]
                side_new = np.where(z_new[:, 0] != 0.0, np.sign(z_new[:, 0]), side)
                # rare large increments whose pre-image lies outside twice
                # the tube radius fall back to the plain Euler step already
                # computed for this path (the hybrid one-step map stays a
                # function of state and noise, so no conditioning bias)
                y_new, ok = eng.invert(
                    z_new,
                    t + h,
                    side_new,
                    z_scale=float(np.max(np.abs(S[idx]))) + 1.0,
                    y1_max=2.0 * r_tube[idx],
                )
                idx = idx[ok]
                if idx.size == 0:
                    continue
                y_new = y_new[ok]
                Qn = np.clip(y_new[:, 1], params.q_lo, params.q_hi)
                nun = np.clip(y_new[:, 2], 0.0, 1.0)
                lvl_new = (
                    barriers.buy(Qn, nun, t + h)
                    if which == "buy"
                    else barriers.sell(Qn, nun, t + h)
                )
                S_new[idx] = y_new[:, 0] + np.asarray(lvl_new, dtype=float)
                Q_new[idx] = Qn
                nu_new[idx] = nun
                in_tube[idx] = True
                # the applied control inside the tube is the side's policy
                # rate; the inventory increment additionally carries a
                # mean-zero coordinate-change fluctuation that is not a
                # traded quantity, so rewards use the policy rate
                if which == "buy":
                    u_eff[idx] = np.where(x1[idx] < 0.0, u_max[idx], 0.0)
                    mode[idx] = np.where(x1[idx] < 0.0, Mode.BUY, Mode.WAIT)
                else:
                    u_eff[idx] = np.where(x1[idx] > 0.0, u_min[idx], 0.0)
                    mode[idx] = np.where(x1[idx] > 0.0, Mode.SELL, Mode.WAIT)

        J += math.exp(-params.rho * (t - t0)) * running_reward(S, Q, u_eff, params) * h

        if record:
            rec["mode"][i] = mode
            rec["rate"][i] = u_eff
            rec["region"][i] = in_tube
            rec["t"][i + 1] = t + h
            rec["S"][i + 1], rec["Q"][i + 1], rec["nu"][i + 1] = S_new, Q_new, nu_new

        S, Q, nu = S_new, Q_new, nu_new
        t += h

    J += math.exp(-params.rho * (params.T - t0)) * terminal_reward(S, Q, params)
    return J, (rec if record else None)


def _n_steps(params: ModelParams, t0: float, dt: float) -> int:
    span = params.T - t0
    if span < 0:
        raise ValueError("start time beyond the horizon")
    if span == 0:
        return 0
    n = int(math.ceil(span / dt - 1e-9))
    return max(n, 1)


def simulate_controlled_path(
    params: ModelParams,
    barriers: SmoothedBarriers,
    start,
    dt: float,
    seed: int,
    scheme: str = "plain",
    specs: StorageSystemSpecs | None = None,
    sigma_override: float | None = None,
) -> ControlledPath:
    """Simulate one controlled trajectory from `start` to the horizon.

    scheme is "plain" (Euler throughout) or "transformed" (tube steps
    through the drift-straightening change of variables).  The final
    step is shortened when the horizon is not a multiple of dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in ("plain", "transformed"):
        raise ValueError(f"unknown scheme: {scheme!r}")
    st = _as_state(start)
    if scheme == "transformed" and specs is None:
        specs = storage_system_spec(params, barriers)
    n = _n_steps(params, st.t, dt)
    normals = _path_normals(seed, np.array([0]), n)
    J, rec = _simulate_batch(
        params, barriers, st, dt, normals, scheme, specs, record=True,
        sigma_override=sigma_override,
    )
    return ControlledPath(
        t=rec["t"],
        S=rec["S"][:, 0],
        Q=rec["Q"][:, 0],
        nu=rec["nu"][:, 0],
        mode=rec["mode"][:, 0],
        rate=rec["rate"][:, 0],
        region=rec["region"][:, 0],
        discounted_reward=float(J[0]),
        scheme=scheme,
    )


def estimate_J(
    params: ModelParams,
    barriers: SmoothedBarriers,
    starts,
    n_paths: int,
    dt: float,
    seed: int,
    scheme: str = "plain",
    antithetic: bool = True,
    threads: int = 1,
    value: ValueField | None = None,
    sigma_override: float | None = None,
) -> EvaluationReport:
    """Monte Carlo estimate of the policy objective at each start point.

    n_paths counts statistical samples: with antithetic=True each sample
    is the average of a +/- increment pair (two trajectories).  Paths
    are keyed to (seed, sample index), so estimates are bit-identical
    for any `threads`; threads only partitions the work.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if scheme not in ("plain", "transformed"):
        raise ValueError(f"unknown scheme: {scheme!r}")
    state_list = tuple(_as_state(s) for s in (starts if hasattr(starts, "__len__") else [starts]))
    specs = storage_system_spec(params, barriers) if scheme == "transformed" else None

    means = np.empty(len(state_list))
    ses = np.empty(len(state_list))
    for k, st in enumerate(state_list):
        n = _n_steps(params, st.t, dt)
        samples = np.empty(n_paths)

        def run_chunk(indices: np.ndarray) -> None:
            if n == 0:
                xi = np.empty((indices.size, 0))
                J, _ = _simulate_batch(
                    params, barriers, st, dt, xi, scheme, specs,
                    sigma_override=sigma_override,
                )
                samples[indices] = J
                return
            xi = _path_normals(seed, indices, n)
            J_plus, _ = _simulate_batch(
                params, barriers, st, dt, xi, scheme, specs,
                sigma_override=sigma_override,
            )
            if antithetic:
                J_minus, _ = _simulate_batch(
                    params, barriers, st, dt, -xi, scheme, specs,
                    sigma_override=sigma_override,
                )
                samples[indices] = 0.5 * (J_plus + J_minus)
            else:
                samples[indices] = J_plus

        all_idx = np.arange(n_paths)
        if threads <= 1 or n_paths < 2 * threads:
            run_chunk(all_idx)
        else:
            chunks = np.array_split(all_idx, threads)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run_chunk, chunks))

        means[k] = float(np.mean(samples))
        ses[k] = (
            float(np.std(samples, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        )

    grid_value = None
    if value is not None:
        grid_value = np.array(
            [value.at(st.s, st.q, st.nu1, st.t) for st in state_list]
        )
    return EvaluationReport(
        starts=state_list,
        n_paths=n_paths,
        mean=means,
        standard_error=ses,
        dt=dt,
        seed=seed,
        scheme=scheme,
        antithetic=antithetic,
        grid_value=grid_value,
    )
