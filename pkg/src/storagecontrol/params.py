"""Model definition: price dynamics, storage limits, rewards.

The traded commodity price S follows a mean-reverting diffusion whose
long-run level switches with an unobserved finite-state Markov regime Y:

    dS_t = kappa * (mu(Y_t) + K(t) - S_t) dt + sigma * dW_t,

where K is an optional deterministic seasonal offset.  A storage facility
with inventory Q in [q_lo, q_hi] is charged/discharged at a bounded rate
u, paying the price plus a fixed friction d_plus per unit bought and
receiving the price minus d_minus per unit sold, with a proportional
holding cost c0 per unit stored.  At the horizon T the remaining
inventory is liquidated at a scrap factor c_S of the terminal price,
less the sale friction.

Everything downstream (filtering, dynamic programming, simulation) reads
the parameter set defined here.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Seasonality",
    "ModelParams",
    "seasonality",
    "running_reward",
    "terminal_reward",
    "rate_bounds",
    "preset",
    "PRESETS",
]


@dataclass(frozen=True)
class Seasonality:
    """Deterministic seasonal price offset K(t) = K_S * cos(2*pi*(t - t_S) / Delta)."""

    K_S: float
    t_S: float
    Delta: float

    def __post_init__(self) -> None:
        if not self.Delta > 0.0:
            raise ValueError(f"seasonality period Delta must be positive, got {self.Delta}")


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set for the storage control problem.

    mu          : per-regime long-run price levels, strictly decreasing.
    kappa       : mean-reversion speed of the price.
    sigma       : price volatility.
    rate_matrix : generator of the regime chain; rows sum to zero,
                  off-diagonal entries nonnegative.
    rho         : discount rate for rewards.
    T           : horizon.
    nu0         : initial regime distribution (nonnegative, sums to one).
    c0          : proportional storage cost per unit inventory and time.
    d_plus      : friction added to the price when buying.
    d_minus     : friction subtracted from the price when selling.
    c_S         : scrap factor applied to the terminal price, in (0, 1).
    q_lo, q_hi  : inventory bounds.
    M_u         : peak charge/discharge rate (M_u = 0 disables trading).
    ramp_width  : inventory distance over which the admissible rate ramps
                  from 0 at the binding bound up to M_u.
    seasonality : optional seasonal offset; None means K(t) = 0.
    """

    mu: tuple[float, ...]
    kappa: float
    sigma: float
    rate_matrix: tuple[tuple[float, ...], ...]
    rho: float
    T: float
    nu0: tuple[float, ...]
    c0: float
    d_plus: float
    d_minus: float
    c_S: float
    q_lo: float
    q_hi: float
    M_u: float
    ramp_width: float
    seasonality: Seasonality | None = None

    def __post_init__(self) -> None:
        D = len(self.mu)
        if D < 2:
            raise ValueError("need at least two regimes")
        if any(a <= b for a, b in zip(self.mu, self.mu[1:])):
            raise ValueError(f"mu must be strictly decreasing, got {self.mu}")
        if not self.kappa > 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        L = np.asarray(self.rate_matrix, dtype=float)
        if L.shape != (D, D):
            raise ValueError(f"rate_matrix must be {D}x{D}, got shape {L.shape}")
        off = L[~np.eye(D, dtype=bool)]
        if np.any(off < 0.0):
            raise ValueError("rate_matrix off-diagonal entries must be nonnegative")
        if np.any(np.abs(L.sum(axis=1)) > 1e-10):
            raise ValueError("rate_matrix rows must sum to zero")
        if self.rho < 0.0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        if not self.T > 0.0:
            raise ValueError(f"T must be positive, got {self.T}")
        nu0 = np.asarray(self.nu0, dtype=float)
        if nu0.shape != (D,):
            raise ValueError(f"nu0 must have {D} components")
        if np.any(nu0 < 0.0) or abs(nu0.sum() - 1.0) > 1e-10:
            raise ValueError("nu0 must be a probability vector")
        if self.c0 < 0.0:
            raise ValueError(f"c0 must be nonnegative, got {self.c0}")
        if self.d_plus < 0.0 or self.d_minus < 0.0:
            raise ValueError("trading frictions d_plus, d_minus must be nonnegative")
        if not 0.0 < self.c_S < 1.0:
            raise ValueError(f"c_S must lie in (0, 1), got {self.c_S}")
        if not self.q_lo < self.q_hi:
            raise ValueError(f"require q_lo < q_hi, got [{self.q_lo}, {self.q_hi}]")
        if self.M_u < 0.0:
            raise ValueError(f"M_u must be nonnegative, got {self.M_u}")
        if not 0.0 < self.ramp_width <= 0.5 * (self.q_hi - self.q_lo):
            raise ValueError(
                "ramp_width must be positive and at most half the inventory range, "
                f"got {self.ramp_width} for [{self.q_lo}, {self.q_hi}]"
            )

    # -- convenience -----------------------------------------------------

    @property
    def D(self) -> int:
        return len(self.mu)

    @property
    def mu_arr(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    @property
    def rate_matrix_arr(self) -> np.ndarray:
        return np.asarray(self.rate_matrix, dtype=float)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.seasonality is None:
            d.pop("seasonality")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        # accepted spellings: the intensity matrix is conventionally
        # written Lambda, and the scrap factor cS
        for alias, canon in (("Lambda", "rate_matrix"), ("cS", "c_S")):
            if alias in d:
                if canon in d:
                    raise ValueError(f"give either {alias!r} or {canon!r}, not both")
                d[canon] = d.pop(alias)
        seas = d.pop("seasonality", None)
        if seas is not None:
            seas = Seasonality(**seas)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelParams fields: {sorted(unknown)}")
        for key in ("mu", "nu0"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        if "rate_matrix" in d:
            d["rate_matrix"] = tuple(tuple(float(x) for x in row) for row in d["rate_matrix"])
        return cls(seasonality=seas, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


def seasonality(t, params: ModelParams):
    """Seasonal offset K(t); identically zero when no seasonality is configured."""
    t = np.asarray(t, dtype=float)
    s = params.seasonality
    if s is None:
        return np.zeros_like(t) if t.ndim else 0.0
    val = s.K_S * np.cos(2.0 * math.pi * (t - s.t_S) / s.Delta)
    return val if t.ndim else float(val)


def running_reward(s, q, u, params: ModelParams):
    """Instantaneous reward F(s, q, u): trading cash flow minus storage cost.

    Buying (u >= 0) pays s + d_plus per unit; selling (u < 0) receives
    s - d_minus per unit; inventory costs c0 per unit held.
    """
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(q < params.q_lo - 1e-12) or np.any(q > params.q_hi + 1e-12):
        raise ValueError("inventory q outside [q_lo, q_hi]")
    lo, hi = rate_bounds(q, params)
    if np.any(u < lo - 1e-9) or np.any(u > hi + 1e-9):
        raise ValueError("rate u outside the admissible range at this inventory")
    val = np.where(u >= 0.0, -u * (s + params.d_plus), -u * (s - params.d_minus))
    val = val - params.c0 * q
    return float(val) if val.ndim == 0 else val


def terminal_reward(s, q, params: ModelParams):
    """Scrap value Phi(s, q) = q * (c_S * s - d_minus) of inventory left at T."""
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    val = q * (params.c_S * s - params.d_minus)
    return float(val) if val.ndim == 0 else val


def _smoothstep5(x: np.ndarray) -> np.ndarray:
    """Quintic smoothstep 6x^5 - 15x^4 + 10x^3 on [0, 1] (clipped outside)."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


def rate_bounds(q, params: ModelParams):
    """Admissible rate interval [u_min(q), u_max(q)] at inventory q.

    Both bounds ramp smoothly (C^2) to zero at the binding inventory
    bound over a window of width ramp_width, so a full store cannot be
    charged nor an empty one discharged: u_max(q_hi) = u_min(q_lo) = 0.
    """
    q = np.asarray(q, dtype=float)
    w = params.ramp_width
    u_max = params.M_u * _smoothstep5((params.q_hi - q) / w)
    u_min = -params.M_u * _smoothstep5((q - params.q_lo) / w)
    if q.ndim == 0:
        return float(u_min), float(u_max)
    return u_min, u_max


# -- presets ------------------------------------------------------------

PRESETS: dict[str, ModelParams] = {
    # Two-regime electricity-market calibration: yearly time unit, fast
    # mean reversion, symmetric half-per-year regime switching, one-year
    # horizon, 100-unit store cycled in about a month at full rate.
    "paper2016": ModelParams(
        mu=(50.0, 30.0),
        kappa=15.0,
        sigma=50.0,
        rate_matrix=((-0.5, 0.5), (0.5, -0.5)),
        rho=0.05,
        T=1.0,
        nu0=(0.5, 0.5),
        c0=0.0,
        d_plus=10.0,
        d_minus=10.0,
        c_S=0.95,
        q_lo=0.0,
        q_hi=100.0,
        M_u=730.0,
        ramp_width=5.0,
        seasonality=None,
    ),
}


def preset(name: str) -> ModelParams:
    """Look up a named parameter preset."""
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
