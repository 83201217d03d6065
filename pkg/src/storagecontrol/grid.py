"""Rectangular state-time grids and the value/policy fields living on them.

The dynamic-programming state is (s, q, nu1, t): price, inventory,
filtered probability of the high-price regime, time.  All axes are
uniformly spaced; arrays are indexed [i_s, i_q, i_nu, i_t].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ModelParams, rate_bounds

__all__ = ["Mode", "Grid4D", "ValueField", "PolicyField"]


class Mode:
    """Integer policy modes stored in PolicyField arrays."""

    WAIT = 0
    BUY = 1
    SELL = 2

    NAMES = {WAIT: "wait", BUY: "buy", SELL: "sell"}
    FROM_NAME = {v: k for k, v in NAMES.items()}


@dataclass(frozen=True)
class Grid4D:
    """Uniform tensor grid over price x inventory x regime-belief x time."""

    s: np.ndarray
    q: np.ndarray
    nu: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        for name, ax in (("s", self.s), ("q", self.q), ("nu", self.nu), ("t", self.t)):
            if ax.ndim != 1 or ax.size < 3:
                raise ValueError(f"axis {name} needs at least 3 nodes")
            d = np.diff(ax)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
                raise ValueError(f"axis {name} must be uniformly increasing")
        if self.nu[0] != 0.0 or self.nu[-1] != 1.0:
            raise ValueError("nu axis must span [0, 1]")
        if self.t[0] != 0.0:
            raise ValueError("time axis must start at 0")

    @classmethod
    def make(
        cls,
        params: ModelParams,
        s_min: float = -100.0,
        s_max: float = 200.0,
        n_s: int = 151,
        n_q: int = 41,
        n_nu: int = 21,
        n_t: int = 200,
    ) -> "Grid4D":
        """Build a grid for `params`, checking that the price truncation
        leaves ample room beyond the regime levels (several stationary
        standard deviations sigma / sqrt(2*kappa) plus trading slack)."""
        stat_sd = params.sigma / math.sqrt(2.0 * params.kappa)
        if not s_min < min(params.mu) - 6.0 * stat_sd:
            raise ValueError(
                f"s_min={s_min} too high: need < {min(params.mu) - 6.0 * stat_sd:.3f}"
            )
        if not s_max > max(params.mu) + 6.0 * stat_sd:
            raise ValueError(
                f"s_max={s_max} too low: need > {max(params.mu) + 6.0 * stat_sd:.3f}"
            )
        return cls(
            s=np.linspace(s_min, s_max, n_s),
            q=np.linspace(params.q_lo, params.q_hi, n_q),
            nu=np.linspace(0.0, 1.0, n_nu),
            t=np.linspace(0.0, params.T, n_t),
        )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.s.size, self.q.size, self.nu.size, self.t.size)

    @property
    def h_s(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def h_q(self) -> float:
        return float(self.q[1] - self.q[0])

    @property
    def h_nu(self) -> float:
        return float(self.nu[1] - self.nu[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def index_of(self, s=None, q=None, nu=None, t=None) -> tuple:
        """Nearest-node indices for the coordinates given (None = skip)."""
        out = []
        for val, ax in ((s, self.s), (q, self.q), (nu, self.nu), (t, self.t)):
            if val is None:
                out.append(None)
            else:
                out.append(int(np.argmin(np.abs(ax - val))))
        return tuple(out)


@dataclass(frozen=True)
class ValueField:
    """Discounted optimal value V on a Grid4D; V.shape == grid.shape."""

    grid: Grid4D
    V: np.ndarray
    diagnostics: dict | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.V.shape != self.grid.shape:
            raise ValueError(f"V shape {self.V.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.V)):
            raise ValueError("value field contains non-finite entries")

    def at(self, s: float, q: float, nu: float, t: float) -> float:
        """Multilinear interpolation of V at an interior point."""
        axes = (self.grid.s, self.grid.q, self.grid.nu, self.grid.t)
        pt = (s, q, nu, t)
        idx, wgt = [], []
        for x, ax in zip(pt, axes):
            if x < ax[0] - 1e-9 or x > ax[-1] + 1e-9:
                raise ValueError(f"point {pt} outside grid")
            j = min(int(np.searchsorted(ax, x, side="right")) - 1, ax.size - 2)
            j = max(j, 0)
            idx.append(j)
            wgt.append((x - ax[j]) / (ax[j + 1] - ax[j]))
        out = 0.0
        for corner in range(16):
            w, sel = 1.0, []
            for d in range(4):
                hi = (corner >> d) & 1
                w *= wgt[d] if hi else (1.0 - wgt[d])
                sel.append(idx[d] + hi)
            out += w * self.V[tuple(sel)]
        return float(out)


@dataclass(frozen=True)
class PolicyField:
    """Argmax control mode on a Grid4D; rates derive from mode and inventory."""

    grid: Grid4D
    mode: np.ndarray  # int8, values in Mode.{WAIT,BUY,SELL}
    params: ModelParams

    def __post_init__(self) -> None:
        if self.mode.shape != self.grid.shape:
            raise ValueError(f"mode shape {self.mode.shape} != grid shape {self.grid.shape}")
        if not np.isin(self.mode, [Mode.WAIT, Mode.BUY, Mode.SELL]).all():
            raise ValueError("mode array contains values other than wait/buy/sell")

    def rate(self) -> np.ndarray:
        """Trading rate at every node: u_max(q) in Buy, u_min(q) in Sell, 0 in Wait."""
        u_min, u_max = rate_bounds(self.grid.q, self.params)
        u_min = u_min[None, :, None, None]
        u_max = u_max[None, :, None, None]
        out = np.zeros(self.grid.shape)
        out = np.where(self.mode == Mode.BUY, u_max, out)
        out = np.where(self.mode == Mode.SELL, u_min, out)
        return out
