"""Extraction and smoothing of the trading thresholds.

At each (q, nu, t) node the recorded policy is scanned along the price
axis.  For the threshold rule the action regions are price intervals —
Buy below some level, Sell above another — so the scan reduces each
policy column to (at most) two numbers: the Buy/Wait boundary and the
Wait/Sell boundary.  Columns where the scanned modes are not of the form
Buy* Wait* Sell* are flagged rather than silently coerced.

The raw levels live on the price grid midpoints and inherit its
staircase error.  `smooth_barriers` replaces them with a least-squares
tensor fit in (q, nu, time).  The time basis has two scales: Legendre
polynomials in t/T carry the slow drift of the levels over the horizon,
and rational features built from w = exp(-kappa (T - t)) carry the
terminal boundary layer.  Near t = T the levels steepen toward the
scrap-value asymptote like 1/(1 - cS w) — the Buy level at empty
storage dives off any finite price range — and a polynomial in either
t or w would need absurd degree to follow that; the rational features
match the shape by construction.

The smoothed field is what the pathwise machinery consumes: the
simulation transform requires barriers twice differentiable in nu and
once in t, which the fit provides by construction (`check` reports the
fit deviation, the non-parallelity margin, and the mixed-derivative
sign).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid4D, Mode, PolicyField, ValueField
from .hjb import mixed_derivative_field
from .params import ModelParams

__all__ = [
    "BarrierField",
    "SmoothedBarriers",
    "extract_barriers",
    "smooth_barriers",
    "check_nonparallelity",
    "check_mixed_derivative",
    "classification_agreement",
]


@dataclass(frozen=True)
class BarrierField:
    """Trading thresholds on the (q, nu, t) grid.

    buy_level[j,k,n]: price below which the recorded policy buys
    (midpoint between the last Buy node and the first non-Buy node);
    -inf where no node buys.  sell_level: price above which it sells;
    +inf where no node sells.  non_threshold marks columns whose mode
    sequence was not Buy* Wait* Sell*.
    """

    grid: Grid4D
    buy_level: np.ndarray
    sell_level: np.ndarray
    non_threshold: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        want = (self.grid.q.size, self.grid.nu.size, self.grid.t.size)
        for name in ("buy_level", "sell_level"):
            arr = getattr(self, name)
            if arr.shape != want:
                raise ValueError(f"{name} must have shape {want}, got {arr.shape}")
        if self.non_threshold is None:
            object.__setattr__(self, "non_threshold", np.zeros(want, dtype=bool))
        elif self.non_threshold.shape != want:
            raise ValueError(f"non_threshold must have shape {want}")

    # conventional names: the lower (Buy/Wait) level and the higher
    # (Wait/Sell) level
    @property
    def b_lo(self) -> np.ndarray:
        return self.buy_level

    @property
    def b_hi(self) -> np.ndarray:
        return self.sell_level


def extract_barriers(policy: PolicyField) -> BarrierField:
    """Scan the recorded policy along the price axis into threshold levels."""
    g = policy.grid
    mode = policy.mode  # (n_s, n_q, n_nu, n_t)
    s = g.s
    n_s = s.size

    is_buy = mode == Mode.BUY
    is_sell = mode == Mode.SELL

    # last Buy node index (-1 if none), first Sell node index (n_s if none)
    rev_buy = is_buy[::-1]
    last_buy = np.where(is_buy.any(axis=0), n_s - 1 - rev_buy.argmax(axis=0), -1)
    first_sell = np.where(is_sell.any(axis=0), is_sell.argmax(axis=0), n_s)

    half = 0.5 * g.h_s
    buy_level = np.where(last_buy >= 0, s[np.clip(last_buy, 0, n_s - 1)] + half, -np.inf)
    # a Buy region covering the whole scanned range has no observed upper edge
    buy_level = np.where(last_buy == n_s - 1, np.inf, buy_level)
    sell_level = np.where(first_sell < n_s, s[np.clip(first_sell, 0, n_s - 1)] - half, np.inf)
    sell_level = np.where(first_sell == 0, -np.inf, sell_level)

    # threshold shape check: Buy nodes must all precede Wait nodes, which
    # precede Sell nodes along the scan.
    idx = np.arange(n_s)[:, None, None, None]
    bad = (
        (is_sell & (idx < last_buy[None]))
        | ((mode == Mode.WAIT) & ((idx < last_buy[None]) | (idx > first_sell[None])))
        | (is_buy & (idx >= first_sell[None]))
    ).any(axis=0)
    # distinct-barrier requirement: a Buy node directly abutting a Sell
    # node makes the two midpoint levels coincide
    both = np.isfinite(buy_level) & np.isfinite(sell_level)
    bad |= both & (buy_level >= sell_level)

    return BarrierField(grid=g, buy_level=buy_level, sell_level=sell_level, non_threshold=bad)


# -- smoothing -------------------------------------------------------------


def _legendre_table(x: np.ndarray, deg: int, max_deriv: int) -> list[np.ndarray]:
    """Legendre columns P_0..P_deg at x for derivative orders 0..max_deriv.

    Three-term recurrence for the values and the differentiated identity
    P^(d)_{k+1} = P^(d)_{k-1} + (2k+1) P^(d-1)_k for the derivatives —
    one pass per order, no polynomial-coefficient juggling (this runs in
    the per-step inner loop of the path simulation).
    """
    n = x.shape[0]
    tables = [np.zeros((n, deg + 1)) for _ in range(max_deriv + 1)]
    V = tables[0]
    V[:, 0] = 1.0
    if deg >= 1:
        V[:, 1] = x
    for k in range(1, deg):
        V[:, k + 1] = ((2 * k + 1) * x * V[:, k] - k * V[:, k - 1]) / (k + 1)
    for d in range(1, max_deriv + 1):
        D, lower = tables[d], tables[d - 1]
        if deg >= 1 and d == 1:
            D[:, 1] = 1.0
        for k in range(1, deg):
            D[:, k + 1] = D[:, k - 1] + (2 * k + 1) * lower[:, k]
    return tables


def _pole_weights(w: np.ndarray, c_S: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boundary-layer feature p(w) = (1/(1-cS w) - 1) / (1/(1-cS) - 1) and
    its first two w-derivatives.  p runs from 0 (far from the horizon) to
    1 (at it), with the steepening controlled by how close cS is to 1.
    Outside cS in (0, 1) the layer degenerates and the features vanish."""
    if not 0.0 < c_S < 1.0:
        z = np.zeros_like(w)
        return z, z.copy(), z.copy()
    scale = c_S / (1.0 - c_S)
    u = 1.0 / (1.0 - c_S * w)
    p = (u - 1.0) / scale
    p1 = c_S * u**2 / scale
    p2 = 2.0 * c_S**2 * u**3 / scale
    return p, p1, p2


def _time_block(t: np.ndarray, params: ModelParams, d_t: int, n_pole: int,
                deriv: int = 0) -> np.ndarray:
    """Time features — Legendre in t/T plus pole features p(w) w^j — or
    their time derivative of order `deriv` (0, 1, or 2)."""
    kap, T = params.kappa, params.T
    x = 2.0 * (t / T) - 1.0
    leg = _legendre_table(x, d_t, deriv)[deriv] * (2.0 / T) ** deriv

    if n_pole == 0:
        return leg
    w = np.exp(-kap * (T - t))
    p, p1, p2 = _pole_weights(w, params.c_S)
    j = np.arange(n_pole)
    wj = w[:, None] ** j
    wjm1 = w[:, None] ** np.maximum(j - 1, 0)
    wjm2 = w[:, None] ** np.maximum(j - 2, 0)
    if deriv == 0:
        po = p[:, None] * wj
    else:
        dfdw = p1[:, None] * wj + j * p[:, None] * wjm1
        if deriv == 1:
            po = kap * w[:, None] * dfdw
        elif deriv == 2:
            d2fdw2 = p2[:, None] * wj + 2 * j * p1[:, None] * wjm1 \
                + j * (j - 1) * p[:, None] * wjm2
            po = kap**2 * w[:, None] * dfdw + (kap * w[:, None]) ** 2 * d2fdw2
        else:
            raise ValueError("time derivative order must be <= 2")
    return np.concatenate([leg, po], axis=1)


def _design_matrix(q01: np.ndarray, nu: np.ndarray, t: np.ndarray,
                   params: ModelParams,
                   degrees: tuple[int, int, int, int]) -> np.ndarray:
    """Tensor basis evaluated at the flattened (q, nu, t) nodes."""
    dq, dn, d_t, n_pole = degrees
    Pq = np.polynomial.legendre.legvander(2.0 * q01 - 1.0, dq)
    Pn = np.polynomial.legendre.legvander(2.0 * nu - 1.0, dn)
    Pt = _time_block(t, params, d_t, n_pole)
    A = (
        Pq[:, None, :, None, None, None]
        * Pn[None, :, None, :, None, None]
        * Pt[None, None, None, None, :, :]
    )
    # -> (Nq*Nnu*Nt, (dq+1)*(dn+1)*n_time) after moving axes
    A = np.transpose(A, (0, 1, 4, 2, 3, 5))
    return A.reshape(q01.size * nu.size * t.size, -1)


@dataclass(frozen=True)
class SmoothedBarriers:
    """Polynomial threshold surfaces b(q, nu, t), smooth in all arguments.

    Evaluation, first and second nu-derivatives, q- and t-derivatives,
    and second time derivative come from the fitted coefficients;
    `max_fit_deviation` records the largest |fit - raw level| over the
    nodes used in the fit.
    """

    params: ModelParams
    grid: Grid4D
    coef_buy: np.ndarray
    coef_sell: np.ndarray
    degrees: tuple[int, int, int, int]
    max_fit_deviation: float
    # per-instance memo of time-contracted coefficient matrices, keyed by
    # (surface, t, derivative order); the path simulation re-evaluates the
    # same instant many times while inverting the step map
    _m_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def _basis_1d(self, x: np.ndarray, deg: int, deriv: int) -> np.ndarray:
        return _legendre_table(x, deg, deriv)[deriv]

    def _eval(self, coef: np.ndarray, q, nu, t, dq: int = 0, dn: int = 0, dt: int = 0):
        q = np.asarray(q, dtype=float)
        nu = np.asarray(nu, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(q.shape, nu.shape, t.shape)
        qf = np.broadcast_to(q, shape).ravel()
        nf = np.broadcast_to(nu, shape).ravel()
        tf = np.broadcast_to(t, shape).ravel()

        p = self.params
        q01 = (qf - p.q_lo) / (p.q_hi - p.q_lo)
        xq, xn = 2.0 * q01 - 1.0, 2.0 * nf - 1.0

        Dq, Dn, Dt, n_pole = self.degrees
        jac_q = 2.0 / (p.q_hi - p.q_lo)

        Bq = self._basis_1d(xq, Dq, dq) * jac_q**dq
        Bn = self._basis_1d(xn, Dn, dn) * 2.0**dn
        Bt = _time_block(tf, p, Dt, n_pole, deriv=dt)

        C = coef.reshape(Dq + 1, Dn + 1, -1)
        out = np.einsum("pi,pj,pk,ijk->p", Bq, Bn, Bt, C)
        return out.reshape(shape) if shape else float(out[0])

    def buy(self, q, nu, t):
        return self._eval(self.coef_buy, q, nu, t)

    def sell(self, q, nu, t):
        return self._eval(self.coef_sell, q, nu, t)

    def buy_derivative(self, q, nu, t, *, dq: int = 0, dn: int = 0, dt: int = 0):
        return self._eval(self.coef_buy, q, nu, t, dq=dq, dn=dn, dt=dt)

    def sell_derivative(self, q, nu, t, *, dq: int = 0, dn: int = 0, dt: int = 0):
        return self._eval(self.coef_sell, q, nu, t, dq=dq, dn=dn, dt=dt)

    def _time_matrices(self, which: str, t: float):
        """Coefficient tensor contracted with the time block and its
        t-derivative at a fixed instant, memoized: (Dq+1, Dn+1) each."""
        key = (which, t)
        hit = self._m_cache.get(key)
        if hit is not None:
            return hit
        Dq, Dn, Dt, n_pole = self.degrees
        coef = self.coef_buy if which == "buy" else self.coef_sell
        C = coef.reshape(Dq + 1, Dn + 1, -1)
        ts = np.array([t])
        M0 = np.einsum("k,ijk->ij", _time_block(ts, self.params, Dt, n_pole)[0], C)
        M1 = np.einsum("k,ijk->ij", _time_block(ts, self.params, Dt, n_pole, deriv=1)[0], C)
        if len(self._m_cache) > 50_000:
            self._m_cache.clear()
        self._m_cache[key] = (M0, M1)
        return M0, M1

    def _jet(self, which: str, q, nu, t):
        """(b, b_q, b_nu, b_t, b_nunu) from a single basis build.

        The path simulation needs this bundle at every step for every
        path near a threshold; building the three 1-D bases once and
        contracting the coefficient tensor against a shared time block
        is an order of magnitude cheaper than five separate evaluations.
        """
        p = self.params
        q = np.asarray(q, dtype=float)
        nu = np.asarray(nu, dtype=float)
        shape = np.broadcast_shapes(q.shape, nu.shape, np.shape(t))
        qf = np.broadcast_to(q, shape).ravel()
        nf = np.broadcast_to(nu, shape).ravel()
        Dq, Dn, Dt, n_pole = self.degrees
        jac_q = 2.0 / (p.q_hi - p.q_lo)
        xq = 2.0 * (qf - p.q_lo) / (p.q_hi - p.q_lo) - 1.0
        xn = 2.0 * nf - 1.0
        Bq0, Bq1 = _legendre_table(xq, Dq, 1)
        Bn0, Bn1, Bn2 = _legendre_table(xn, Dn, 2)
        if np.ndim(t) == 0:
            M0, M1 = self._time_matrices(which, float(t))
            T0 = Bq0 @ M0
            b = np.einsum("pj,pj->p", T0, Bn0)
            b_n = np.einsum("pj,pj->p", T0, Bn1) * 2.0
            b_nn = np.einsum("pj,pj->p", T0, Bn2) * 4.0
            b_q = np.einsum("pj,pj->p", Bq1 @ M0, Bn0) * jac_q
            b_t = np.einsum("pj,pj->p", Bq0 @ M1, Bn0)
        else:
            coef = self.coef_buy if which == "buy" else self.coef_sell
            C = coef.reshape(Dq + 1, Dn + 1, -1)
            tf = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
            Ct0 = np.einsum("pk,ijk->pij", _time_block(tf, p, Dt, n_pole), C)
            Ct1 = np.einsum("pk,ijk->pij", _time_block(tf, p, Dt, n_pole, deriv=1), C)
            b = np.einsum("pi,pij,pj->p", Bq0, Ct0, Bn0)
            b_q = np.einsum("pi,pij,pj->p", Bq1, Ct0, Bn0) * jac_q
            b_n = np.einsum("pi,pij,pj->p", Bq0, Ct0, Bn1) * 2.0
            b_nn = np.einsum("pi,pij,pj->p", Bq0, Ct0, Bn2) * 4.0
            b_t = np.einsum("pi,pij,pj->p", Bq0, Ct1, Bn0)
        if not shape:
            return tuple(float(a[0]) for a in (b, b_q, b_n, b_t, b_nn))
        return tuple(a.reshape(shape) for a in (b, b_q, b_n, b_t, b_nn))

    def buy_jet(self, q, nu, t):
        """Buy level with its q-, nu-, t-derivatives and second
        nu-derivative, evaluated together."""
        return self._jet("buy", q, nu, t)

    def sell_jet(self, q, nu, t):
        """Sell level with its q-, nu-, t-derivatives and second
        nu-derivative, evaluated together."""
        return self._jet("sell", q, nu, t)


def smooth_barriers(
    raw: BarrierField,
    params: ModelParams,
    degrees: tuple[int, int, int, int] = (6, 6, 8, 6),
) -> SmoothedBarriers:
    """Least-squares tensor fit of the raw threshold levels.

    Flagged non-threshold columns are excluded from the fit.  Levels that
    fell outside the scanned price range (recorded as ``±inf``) are
    censored observations: the scan only certifies that the true level
    lies beyond the range edge, so such nodes constrain the fit
    one-sidedly.  Each pass drops the censored nodes the current fit
    already places beyond the edge and refits; the ones still violating
    keep pulling the surface outward.  This anchors the fit in regions it
    would otherwise have to extrapolate into (the layer before the
    horizon where the Buy level dives below any plausible price) without
    biasing it toward the artificial clamp value.

    The reported deviation is the worst of |fit - level| over observed
    nodes and the residual intrusion past the range edge at censored
    nodes.
    """
    g = raw.grid
    q01 = (g.q - params.q_lo) / (params.q_hi - params.q_lo)
    A = _design_matrix(q01, g.nu, g.t, params, degrees)

    h_s = g.s[1] - g.s[0]
    lo_cens = float(g.s[0] - 0.5 * h_s)
    hi_cens = float(g.s[-1] + 0.5 * h_s)

    ok = ~raw.non_threshold.ravel()
    if ok.sum() < A.shape[1]:
        raise ValueError(
            f"only {int(ok.sum())} threshold nodes for {A.shape[1]} coefficients"
        )

    def deviation(f, lv, observed, cens_lo, cens_hi):
        dev = 0.0
        if observed.any():
            dev = float(np.max(np.abs(f[observed] - lv[observed])))
        if cens_lo.any():
            dev = max(dev, float(np.max(f[cens_lo] - lo_cens, initial=0.0)))
        if cens_hi.any():
            dev = max(dev, float(np.max(hi_cens - f[cens_hi], initial=0.0)))
        return dev

    max_dev = 0.0
    coefs = []
    for lev in (raw.buy_level, raw.sell_level):
        lv = lev.ravel()
        observed = ok & np.isfinite(lv)
        cens_lo = ok & (lv == -np.inf)
        cens_hi = ok & (lv == np.inf)
        y = np.where(cens_lo, lo_cens, np.where(cens_hi, hi_cens, lv))
        use = ok.copy()
        # The refit after dropping satisfied censored nodes can swing in
        # poorly-determined directions when the basis is large relative
        # to the grid, so keep the best iterate by measured deviation
        # rather than the last.
        best = (np.inf, None)
        for _ in range(6):
            c, *_ = np.linalg.lstsq(A[use], y[use], rcond=None)
            f = A @ c
            dev = deviation(f, lv, observed, cens_lo, cens_hi)
            if dev < best[0]:
                best = (dev, c)
            satisfied = (cens_lo & (f <= lo_cens)) | (cens_hi & (f >= hi_cens))
            nxt = ok & ~satisfied
            if np.array_equal(nxt, use) or nxt.sum() < A.shape[1]:
                break
            use = nxt
        max_dev = max(max_dev, best[0])
        coefs.append(best[1])

    return SmoothedBarriers(
        params=params,
        grid=g,
        coef_buy=coefs[0],
        coef_sell=coefs[1],
        degrees=degrees,
        max_fit_deviation=max_dev,
    )


# -- regularity checks -----------------------------------------------------


def check_nonparallelity(
    smoothed: SmoothedBarriers,
    fd_step: float = 1e-4,
    max_failing: int = 50,
) -> dict:
    """Margin |sigma - r(nu) b_nu| at every interior-nu grid node, for
    both threshold surfaces, where r(nu) = (kappa/sigma)(mu_1-mu_2)
    nu(1-nu) is the filter diffusion.  b_nu is a central finite
    difference of the smooth surface.  A vanishing margin means the price
    noise runs parallel to the moving threshold, which breaks the
    pathwise change of variables, so the report carries the minimum and
    the failing nodes.  Also reports the slope at which the margin would
    hit zero at nu = 1/2 (at the vertices that forbidden slope is
    infinite: any bounded slope passes).
    """
    p = smoothed.params
    g = smoothed.grid
    nu = g.nu[1:-1]  # margin degenerates to sigma at the vertices
    q, n, t = np.meshgrid(g.q, nu, g.t, indexing="ij")
    r = (p.kappa / p.sigma) * (p.mu[0] - p.mu[1]) * n * (1.0 - n)

    report: dict = {
        "forbidden_slope_at_half": float(p.sigma**2 / (p.kappa * (p.mu[0] - p.mu[1]) * 0.25))
        if p.mu[0] != p.mu[1]
        else np.inf,
    }
    overall = np.inf
    for name, fn in (("buy", smoothed.buy), ("sell", smoothed.sell)):
        b_nu = (fn(q, n + fd_step, t) - fn(q, n - fd_step, t)) / (2.0 * fd_step)
        margin = np.abs(p.sigma - r * b_nu)
        failing = np.argwhere(margin <= 0.0)
        report[name] = {
            "min_margin": float(margin.min()),
            "max_abs_b_nu": float(np.max(np.abs(b_nu))),
            "n_failing": int(failing.shape[0]),
            "failing_nodes": [
                (float(g.q[i]), float(nu[j]), float(g.t[k]))
                for i, j, k in failing[:max_failing]
            ],
        }
        overall = min(overall, report[name]["min_margin"])
    report["min_margin"] = float(overall)
    return report


def check_mixed_derivative(value: ValueField) -> dict:
    """Report on d^2 V / ds dq over the grid: the threshold levels exist
    as implicit functions only while V_sq stays away from 1, so the
    quantity of interest is min |V_sq - 1|.  The terminal slice has
    V_sq = cS exactly (scrap value is bilinear)."""
    Vsq = mixed_derivative_field(value)
    margin = np.abs(Vsq - 1.0)
    worst = np.unravel_index(int(np.argmin(margin)), margin.shape)
    g = value.grid
    return {
        "min_margin": float(margin.min()),
        "min_margin_node": (
            float(g.s[worst[0]]),
            float(g.q[worst[1]]),
            float(g.nu[worst[2]]),
            float(g.t[worst[3]]),
        ),
        "max_V_sq": float(Vsq.max()),
        "min_V_sq": float(Vsq.min()),
        "terminal_min_margin": float(np.abs(Vsq[..., -1] - 1.0).min()),
    }


def classification_agreement(
    policy: PolicyField,
    smoothed: SmoothedBarriers,
) -> float:
    """Fraction of grid nodes whose recorded mode matches the mode implied
    by the smoothed thresholds (Buy below buy level, Sell above sell
    level, Wait between)."""
    g = policy.grid
    s = g.s[:, None, None, None]
    q = g.q[None, :, None, None]
    nu = g.nu[None, None, :, None]
    t = g.t[None, None, None, :]
    b = smoothed.buy(q, nu, t)
    a = smoothed.sell(q, nu, t)
    mode = np.where(s >= a, Mode.SELL, np.where(s <= b, Mode.BUY, Mode.WAIT)).astype(np.int8)
    return float(np.mean(mode == policy.mode))
