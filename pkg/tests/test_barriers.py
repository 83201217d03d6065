"""Threshold extraction, the smoothed surfaces and their derivatives,
and the regularity checks built on them."""

import numpy as np
import pytest

import storagecontrol as sc
from storagecontrol.grid import Mode

TINY_T = np.linspace(0.0, 1.0, 9)


def synthetic_grid(params, n_s=11, n_q=5, n_nu=5, n_t=9):
    return sc.Grid4D(
        s=np.linspace(0.0, 100.0, n_s),
        q=np.linspace(params.q_lo, params.q_hi, n_q),
        nu=np.linspace(0.0, 1.0, n_nu),
        t=np.linspace(0.0, params.T, n_t),
    )


def policy_from_levels(grid, params, buy, sell):
    """Threshold policy: Buy strictly below `buy`, Sell strictly above
    `sell` (levels given on the (q, nu, t) grid)."""
    s = grid.s[:, None, None, None]
    mode = np.where(
        s > sell[None], Mode.SELL, np.where(s < buy[None], Mode.BUY, Mode.WAIT)
    ).astype(np.int8)
    return sc.PolicyField(grid=grid, mode=mode, params=params)


# -- extraction ------------------------------------------------------------


class TestExtraction:
    def test_midpoint_recovery(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        buy = np.full(shape, 35.0)  # halfway between the nodes 30 and 40
        sell = np.full(shape, 75.0)
        raw = sc.extract_barriers(policy_from_levels(g, params, buy, sell))
        assert np.all(raw.buy_level == 35.0)
        assert np.all(raw.sell_level == 75.0)
        assert not raw.non_threshold.any()

    def test_all_wait_column_censored_both_ways(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        raw = sc.extract_barriers(
            policy_from_levels(g, params, np.full(shape, -1.0), np.full(shape, 200.0))
        )
        assert np.all(raw.buy_level == -np.inf)
        assert np.all(raw.sell_level == np.inf)
        assert not raw.non_threshold.any()

    def test_all_buy_column_censored_high(self, params):
        g = synthetic_grid(params)
        mode = np.full(g.shape, Mode.BUY, dtype=np.int8)
        raw = sc.extract_barriers(sc.PolicyField(grid=g, mode=mode, params=params))
        assert np.all(raw.buy_level == np.inf)
        assert np.all(raw.sell_level == np.inf)
        assert not raw.non_threshold.any()

    def test_scrambled_column_flagged(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        policy = policy_from_levels(g, params, np.full(shape, 35.0), np.full(shape, 75.0))
        mode = policy.mode.copy()
        mode[8, 0, 0, 0] = Mode.BUY  # a Buy node above Wait nodes
        raw = sc.extract_barriers(sc.PolicyField(grid=g, mode=mode, params=params))
        assert raw.non_threshold[0, 0, 0]
        assert raw.non_threshold.sum() == 1

    def test_abutting_buy_sell_flagged(self, params):
        g = synthetic_grid(params)
        s = g.s[:, None, None, None]
        mode = np.broadcast_to(np.where(s <= 40.0, Mode.BUY, Mode.SELL), g.shape)
        raw = sc.extract_barriers(
            sc.PolicyField(grid=g, mode=mode.astype(np.int8), params=params)
        )
        # midpoints coincide at 45: no Wait band separates the regions
        assert raw.non_threshold.all()

    def test_shape_validation(self, params):
        g = synthetic_grid(params)
        good = np.zeros((g.q.size, g.nu.size, g.t.size))
        with pytest.raises(ValueError, match="buy_level"):
            sc.BarrierField(grid=g, buy_level=good[:-1], sell_level=good)

    def test_level_aliases(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        raw = sc.BarrierField(
            grid=g, buy_level=np.full(shape, 25.0), sell_level=np.full(shape, 45.0)
        )
        assert raw.b_lo is raw.buy_level
        assert raw.b_hi is raw.sell_level

    def test_terminal_slice_of_solved_policy(self, params, reduced_solution):
        # at T the recorded policy follows the scrap slope V_q = cS*s - d-:
        # buying would need s <= -(d+ + d-)/(1 - cS) = -400 (off the grid,
        # so the level is censored low) and selling starts at s >= 0 (the
        # midpoint sits half a cell below the first nonnegative node)
        _, policy = reduced_solution
        raw = sc.extract_barriers(policy)
        assert np.all(raw.buy_level[..., -1] == -np.inf)
        assert np.all(raw.sell_level[..., -1] == -0.5 * policy.grid.h_s)

    def test_solved_policy_is_threshold_shaped(self, reduced_solution):
        _, policy = reduced_solution
        raw = sc.extract_barriers(policy)
        assert not raw.non_threshold.any()


# -- smoothing -------------------------------------------------------------


class TestSmoothing:
    def test_constant_levels_fit_exactly(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        raw = sc.BarrierField(
            grid=g, buy_level=np.full(shape, 40.0), sell_level=np.full(shape, 60.0)
        )
        sm = sc.smooth_barriers(raw, params, degrees=(2, 2, 2, 2))
        assert sm.max_fit_deviation < 1e-9
        assert sm.buy(33.3, 0.41, 0.77) == pytest.approx(40.0, abs=1e-9)
        assert sm.sell(90.0, 0.99, 0.01) == pytest.approx(60.0, abs=1e-9)

    def test_linear_levels_fit_exactly(self, params):
        g = synthetic_grid(params)
        q, nu, t = np.meshgrid(g.q, g.nu, g.t, indexing="ij")
        buy = 20.0 + 0.1 * q + 5.0 * nu - 3.0 * t
        sell = buy + 30.0
        raw = sc.BarrierField(grid=g, buy_level=buy, sell_level=sell)
        sm = sc.smooth_barriers(raw, params, degrees=(2, 2, 2, 2))
        assert sm.max_fit_deviation < 1e-8
        assert sm.buy(47.0, 0.3, 0.6) == pytest.approx(20.0 + 4.7 + 1.5 - 1.8, abs=1e-8)
        # analytic slopes of an exactly-represented plane
        assert sm.buy_derivative(47.0, 0.3, 0.6, dq=1) == pytest.approx(0.1, abs=1e-8)
        assert sm.buy_derivative(47.0, 0.3, 0.6, dn=1) == pytest.approx(5.0, abs=1e-8)
        assert sm.sell_derivative(47.0, 0.3, 0.6, dt=1) == pytest.approx(-3.0, abs=1e-7)

    def test_flagged_columns_excluded(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        buy = np.full(shape, 40.0)
        buy[2, 2, 4] = 1e6
        bad = np.zeros(shape, dtype=bool)
        bad[2, 2, 4] = True
        raw = sc.BarrierField(
            grid=g, buy_level=buy, sell_level=np.full(shape, 60.0), non_threshold=bad
        )
        sm = sc.smooth_barriers(raw, params, degrees=(2, 2, 2, 2))
        assert sm.buy(g.q[2], g.nu[2], g.t[4]) == pytest.approx(40.0, abs=1e-8)

    def test_too_few_nodes_for_basis(self, params):
        g = sc.Grid4D(
            s=np.linspace(0.0, 100.0, 11),
            q=np.linspace(params.q_lo, params.q_hi, 3),
            nu=np.linspace(0.0, 1.0, 3),
            t=np.linspace(0.0, params.T, 3),
        )
        shape = (3, 3, 3)
        raw = sc.BarrierField(
            grid=g, buy_level=np.full(shape, 40.0), sell_level=np.full(shape, 60.0)
        )
        with pytest.raises(ValueError, match="threshold nodes"):
            sc.smooth_barriers(raw, params, degrees=(6, 6, 8, 6))

    def test_censored_nodes_stay_beyond_edge(self, params, reduced_barriers):
        # every censored (off-range) raw level must be fitted past the
        # range edge up to the reported deviation
        raw, sm = reduced_barriers
        g = raw.grid
        q, nu, t = np.meshgrid(g.q, g.nu, g.t, indexing="ij")
        lo = g.s[0] - 0.5 * g.h_s
        cens = raw.buy_level == -np.inf
        assert cens.any()
        fitted = sm.buy(q, nu, t)
        assert np.max(fitted[cens] - lo) <= sm.max_fit_deviation + 1e-9

    def test_reduced_grid_fit_quality(self, reduced_barriers):
        raw, sm = reduced_barriers
        assert sm.max_fit_deviation <= 2.0

    def test_scalar_evaluation_returns_float(self, reduced_barriers):
        _, sm = reduced_barriers
        out = sm.buy(50.0, 0.5, 0.0)
        assert isinstance(out, float)

    def test_broadcast_evaluation(self, reduced_barriers):
        _, sm = reduced_barriers
        q = np.linspace(0.0, 100.0, 4)[:, None]
        nu = np.linspace(0.1, 0.9, 3)[None, :]
        out = sm.sell(q, nu, 0.3)
        assert out.shape == (4, 3)

    def test_time_derivative_order_cap(self, reduced_barriers):
        _, sm = reduced_barriers
        with pytest.raises(ValueError, match="order"):
            sm.buy_derivative(50.0, 0.5, 0.5, dt=3)


class TestSmoothedDerivatives:
    """Analytic derivatives of the fitted surfaces against central finite
    differences, away from and inside the terminal boundary layer."""

    POINTS = [(50.0, 0.5, 0.40), (20.0, 0.3, 0.80), (80.0, 0.7, 0.96)]

    @pytest.mark.parametrize("point", POINTS)
    def test_first_derivatives(self, reduced_barriers, point):
        _, sm = reduced_barriers
        q, nu, t = point
        for fn, der in ((sm.buy, sm.buy_derivative), (sm.sell, sm.sell_derivative)):
            h = 1e-4 * 100.0
            fd = (fn(q + h, nu, t) - fn(q - h, nu, t)) / (2.0 * h)
            assert der(q, nu, t, dq=1) == pytest.approx(fd, rel=1e-6, abs=1e-8)
            h = 1e-5
            fd = (fn(q, nu + h, t) - fn(q, nu - h, t)) / (2.0 * h)
            assert der(q, nu, t, dn=1) == pytest.approx(fd, rel=1e-6, abs=1e-6)
            fd = (fn(q, nu, t + h) - fn(q, nu, t - h)) / (2.0 * h)
            assert der(q, nu, t, dt=1) == pytest.approx(fd, rel=1e-4, abs=1e-4)

    @pytest.mark.parametrize("point", POINTS)
    def test_second_derivatives(self, reduced_barriers, point):
        _, sm = reduced_barriers
        q, nu, t = point
        for fn, der in ((sm.buy, sm.buy_derivative), (sm.sell, sm.sell_derivative)):
            h = 1e-3
            fd = (fn(q, nu + h, t) - 2.0 * fn(q, nu, t) + fn(q, nu - h, t)) / h**2
            assert der(q, nu, t, dn=2) == pytest.approx(fd, rel=1e-4, abs=1e-4)
            h = 1e-4
            fd = (fn(q, nu, t + h) - 2.0 * fn(q, nu, t) + fn(q, nu, t - h)) / h**2
            assert der(q, nu, t, dt=2) == pytest.approx(fd, rel=1e-3, abs=1e-2)

    def test_mixed_derivative(self, reduced_barriers):
        _, sm = reduced_barriers
        q, nu, t = 50.0, 0.5, 0.6
        hq, hn = 1e-2, 1e-4
        fd = (
            sm.buy(q + hq, nu + hn, t)
            - sm.buy(q + hq, nu - hn, t)
            - sm.buy(q - hq, nu + hn, t)
            + sm.buy(q - hq, nu - hn, t)
        ) / (4.0 * hq * hn)
        assert sm.buy_derivative(q, nu, t, dq=1, dn=1) == pytest.approx(
            fd, rel=1e-4, abs=1e-6
        )


# -- solved-field properties -----------------------------------------------


class TestSolvedBarriers:
    def test_raw_levels_nondecreasing_in_belief_at_start(self, reduced_barriers):
        # higher belief in the high-price regime shifts both thresholds up;
        # raw levels move in half-cell quanta, so allow one quantum
        raw, _ = reduced_barriers
        quantum = 0.5 * raw.grid.h_s + 1e-9
        for lev in (raw.buy_level, raw.sell_level):
            assert np.isfinite(lev[..., 0]).all()
            assert np.diff(lev[..., 0], axis=1).min() >= -quantum

    def test_smoothed_levels_increasing_in_belief_at_start(self, reduced_barriers):
        _, sm = reduced_barriers
        g = sm.grid
        q, nu = np.meshgrid(g.q, g.nu, indexing="ij")
        assert np.diff(sm.buy(q, nu, 0.0), axis=1).min() > 0.0
        assert np.diff(sm.sell(q, nu, 0.0), axis=1).min() > 0.0

    def test_raw_levels_nonincreasing_near_horizon(self, params, reduced_barriers):
        # approaching T both levels sink (the scrap clause punishes held
        # inventory), down to censoring for the buy level
        raw, _ = reduced_barriers
        g = raw.grid
        _, iq, inu, _ = g.index_of(q=50.0, nu=0.5)
        cols = g.t >= 0.75 * params.T
        for lev in (raw.buy_level, raw.sell_level):
            col = lev[iq, inu, cols]
            finite = np.isfinite(col)
            # censored entries may only appear as a trailing block
            if not finite.all():
                assert not finite[np.argmin(finite):].any()
            assert np.diff(col[finite]).max() <= 1e-9

    def test_levels_ordered_where_both_observed(self, reduced_barriers):
        raw, _ = reduced_barriers
        both = np.isfinite(raw.buy_level) & np.isfinite(raw.sell_level)
        assert np.all(raw.buy_level[both] < raw.sell_level[both])

    def test_classification_agreement(self, reduced_solution, reduced_barriers):
        _, policy = reduced_solution
        _, sm = reduced_barriers
        assert sc.classification_agreement(policy, sm) >= 0.98

    def test_start_levels_inside_reference_bands(self, reduced_barriers):
        # mid store, even belief, start of horizon: buy threshold in the
        # low-20s-to-30 band, sell threshold in the 40s
        _, sm = reduced_barriers
        assert 20.0 <= sm.buy(50.0, 0.5, 0.0) <= 30.0
        assert 40.0 <= sm.sell(50.0, 0.5, 0.0) <= 50.0


# -- regularity checks -----------------------------------------------------


class TestNonparallelity:
    def test_flat_surfaces_margin_is_sigma(self, params):
        g = synthetic_grid(params)
        shape = (g.q.size, g.nu.size, g.t.size)
        raw = sc.BarrierField(
            grid=g, buy_level=np.full(shape, 40.0), sell_level=np.full(shape, 60.0)
        )
        sm = sc.smooth_barriers(raw, params, degrees=(2, 2, 2, 2))
        rep = sc.check_nonparallelity(sm)
        assert rep["min_margin"] == pytest.approx(params.sigma, abs=1e-6)
        assert rep["buy"]["n_failing"] == 0
        assert rep["buy"]["failing_nodes"] == []

    def test_forbidden_slope_at_even_belief(self, params, reduced_barriers):
        # the margin sigma - r(nu) b_nu can only vanish at nu = 1/2 when
        # b_nu reaches sigma^2 / (kappa (mu1 - mu2) / 4)
        _, sm = reduced_barriers
        rep = sc.check_nonparallelity(sm)
        expected = params.sigma**2 / (params.kappa * (params.mu[0] - params.mu[1]) * 0.25)
        assert rep["forbidden_slope_at_half"] == pytest.approx(expected, rel=1e-12)
        assert rep["forbidden_slope_at_half"] == pytest.approx(33.333333, abs=5e-7)

    def test_solved_margin_positive(self, reduced_barriers):
        _, sm = reduced_barriers
        rep = sc.check_nonparallelity(sm)
        assert rep["min_margin"] > 0.0
        assert rep["sell"]["min_margin"] > 0.0
        assert rep["buy"]["min_margin"] > 0.0


class TestMixedDerivativeCheck:
    def test_terminal_margin_exact(self, params, reduced_solution):
        value, _ = reduced_solution
        rep = sc.check_mixed_derivative(value)
        assert rep["terminal_min_margin"] == pytest.approx(1.0 - params.c_S, abs=1e-12)
        assert rep["min_margin"] > 0.0

    def test_value_constant_in_inventory(self, params):
        g = synthetic_grid(params)
        V = np.broadcast_to(
            np.sin(g.s / 30.0)[:, None, None, None] * (1.0 + g.t)[None, None, None, :],
            g.shape,
        ).copy()
        rep = sc.check_mixed_derivative(sc.ValueField(grid=g, V=V))
        assert rep["min_margin"] == pytest.approx(1.0, abs=1e-12)
        assert rep["max_V_sq"] == pytest.approx(0.0, abs=1e-12)
