"""Monte-Carlo policy evaluation: input validation, degenerate cases with
exact answers, closed-form agreement for the idle system, path-record
invariants, estimator reproducibility (seeds, threads, antithetic
pairing), and policy-comparison sanity (shifted thresholds never beat the
extracted policy, higher discounting lowers the value, the
discontinuous-drift scheme agrees with the plain one in distribution)."""

import dataclasses
import math

import numpy as np
import pytest

import storagecontrol as sc
from storagecontrol.grid import Mode

START = (40.0, 50.0, 0.5, 0.0)


def idle_params(params):
    """No trading, no regime switching: inventory frozen, price a plain OU."""
    D = len(params.mu)
    zero = tuple(tuple(0.0 for _ in range(D)) for _ in range(D))
    return dataclasses.replace(params, M_u=0.0, rate_matrix=zero)


def shift_thresholds(smoothed, delta):
    """Move both threshold surfaces up by a constant price offset."""
    coef_buy = smoothed.coef_buy.copy()
    coef_sell = smoothed.coef_sell.copy()
    coef_buy[0] += delta  # constant basis function of the tensor fit
    coef_sell[0] += delta
    return dataclasses.replace(smoothed, coef_buy=coef_buy, coef_sell=coef_sell)


def idle_closed_form(params, s0, q0, t0, regime):
    """J for M_u = 0, Lambda = 0, conditioned on the regime: the price is an
    OU process around mu[regime] and the only cash flow is the scrap value."""
    tau = params.T - t0
    mean_s = params.mu[regime] + (s0 - params.mu[regime]) * math.exp(-params.kappa * tau)
    return q0 * (params.c_S * mean_s - params.d_minus) * math.exp(-params.rho * tau)


class TestValidation:
    def test_state_rejects_invalid_probability(self):
        with pytest.raises(ValueError, match=r"nu1 must lie in \[0, 1\]"):
            sc.SystemState(40.0, 50.0, 1.2, 0.0)
        with pytest.raises(ValueError, match=r"nu1 must lie in \[0, 1\]"):
            sc.SystemState(40.0, 50.0, -0.01, 0.0)
        assert sc.SystemState(40.0, 50.0, 1.0, 0.0).nu1 == 1.0
        assert sc.SystemState(40.0, 50.0, 0.0, 0.0).nu1 == 0.0

    def test_dt_must_be_positive(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        with pytest.raises(ValueError, match="dt must be positive"):
            sc.estimate_J(params, smoothed, [START], n_paths=4, dt=0.0, seed=0)
        with pytest.raises(ValueError, match="dt must be positive"):
            sc.simulate_controlled_path(params, smoothed, START, dt=-0.1, seed=0)

    def test_requires_at_least_one_path(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        with pytest.raises(ValueError, match="n_paths must be at least 1"):
            sc.estimate_J(params, smoothed, [START], n_paths=0, dt=0.01, seed=0)

    def test_unknown_scheme_rejected(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        with pytest.raises(ValueError, match="unknown scheme: 'midpoint'"):
            sc.simulate_controlled_path(
                params, smoothed, START, dt=0.01, seed=0, scheme="midpoint"
            )

    def test_sigma_override_is_plain_only(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        with pytest.raises(ValueError, match="sigma_override applies to the plain scheme only"):
            sc.estimate_J(
                params,
                smoothed,
                [START],
                n_paths=4,
                dt=0.01,
                seed=0,
                scheme="transformed",
                sigma_override=10.0,
            )

    def test_start_beyond_horizon(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        late = (40.0, 50.0, 0.5, params.T + 0.5)
        with pytest.raises(ValueError, match="start time beyond the horizon"):
            sc.estimate_J(params, smoothed, [late], n_paths=4, dt=0.01, seed=0)


class TestDegenerateExactness:
    def test_start_at_horizon_pays_scrap_exactly(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        report = sc.estimate_J(
            params,
            smoothed,
            [(60.0, 80.0, 0.5, params.T), (0.0, 5.0, 0.5, params.T)],
            n_paths=8,
            dt=0.01,
            seed=3,
        )
        assert report.mean[0] == 80.0 * (0.95 * 60.0 - 10.0)  # 3760, no discounting
        assert report.mean[1] == 5.0 * (0.95 * 0.0 - 10.0)  # -50: stuck with junk
        assert report.standard_error[0] == 0.0
        assert report.standard_error[1] == 0.0

    def test_zero_noise_at_regime_vertex_is_deterministic(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        frozen = idle_params(params)
        start = (70.0, 50.0, 1.0, 0.0)
        kw = dict(n_paths=16, dt=1e-3, antithetic=False, sigma_override=0.0)
        rep_a = sc.estimate_J(frozen, smoothed, [start], seed=1, **kw)
        rep_b = sc.estimate_J(frozen, smoothed, [start], seed=99, **kw)
        # with the noise switched off the seed is irrelevant and every
        # path coincides: the estimator must report that honestly
        assert rep_a.standard_error[0] == 0.0
        assert rep_a.mean[0] == rep_b.mean[0]
        closed = idle_closed_form(frozen, 70.0, 50.0, 0.0, regime=0)
        assert rep_a.mean[0] == pytest.approx(closed, rel=5e-3)

    def test_idle_empty_store_is_worthless(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        frozen = idle_params(params)
        report = sc.estimate_J(
            frozen, smoothed, [(40.0, 0.0, 0.5, 0.0)], n_paths=4, dt=0.01, seed=5
        )
        # no inventory, no trading, no holding cost: every flow is zero
        assert report.mean[0] == 0.0
        assert report.standard_error[0] == 0.0


class TestClosedFormAgreement:
    def test_idle_value_within_three_se(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        frozen = idle_params(params)
        start = (70.0, 50.0, 1.0, 0.9)
        report = sc.estimate_J(
            frozen, smoothed, [start], n_paths=400, dt=1e-3, seed=2024, antithetic=False
        )
        closed = idle_closed_form(frozen, 70.0, 50.0, 0.9, regime=0)
        se = report.standard_error[0]
        assert se > 0.0
        assert abs(report.mean[0] - closed) < 3.0 * se

    def test_antithetic_pairs_collapse_linear_payoff(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        frozen = idle_params(params)
        start = (70.0, 50.0, 1.0, 0.9)
        report = sc.estimate_J(
            frozen, smoothed, [start], n_paths=64, dt=1e-3, seed=8, antithetic=True
        )
        # the payoff is affine in the Brownian increments (frozen inventory,
        # OU price, linear scrap), so each +/- pair averages to the exact
        # discretized mean and the sample spread collapses
        assert report.standard_error[0] <= 1e-9 * abs(report.mean[0])
        closed = idle_closed_form(frozen, 70.0, 50.0, 0.9, regime=0)
        assert report.mean[0] == pytest.approx(closed, rel=5e-3)


class TestPathRecord:
    def test_shapes_and_time_stamps(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        path = sc.simulate_controlled_path(params, smoothed, START, dt=0.3, seed=2)
        assert path.scheme == "plain"
        assert path.t == pytest.approx([0.0, 0.3, 0.6, 0.9, 1.0])  # last step shortened
        assert path.S.shape == path.Q.shape == path.nu.shape == (5,)
        assert path.mode.shape == path.rate.shape == path.region.shape == (4,)
        assert path.mode.dtype == np.int8
        assert np.isin(path.mode, [Mode.WAIT, Mode.BUY, Mode.SELL]).all()

    def test_capacity_and_rate_limits_hold(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        path = sc.simulate_controlled_path(
            params, smoothed, (40.0, 95.0, 0.5, 0.0), dt=2e-3, seed=5
        )
        assert np.all(np.isfinite(path.S))
        assert path.Q.min() >= params.q_lo and path.Q.max() <= params.q_hi
        assert path.nu.min() >= 0.0 and path.nu.max() <= 1.0
        u_min, u_max = sc.rate_bounds(path.Q[:-1], params)
        assert np.all(path.rate <= u_max + 1e-9)
        assert np.all(path.rate >= u_min - 1e-9)
        assert np.all(path.rate[path.mode == Mode.WAIT] == 0.0)
        assert np.all(path.rate[path.mode == Mode.BUY] >= 0.0)
        assert np.all(path.rate[path.mode == Mode.SELL] <= 0.0)

    def test_discounted_reward_matches_records(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        start = sc.SystemState(45.0, 30.0, 0.4, 0.35)
        path = sc.simulate_controlled_path(params, smoothed, start, dt=0.05, seed=9)
        h = np.diff(path.t)
        disc = np.exp(-params.rho * (path.t[:-1] - start.t))
        flows = sc.running_reward(path.S[:-1], path.Q[:-1], path.rate, params)
        total = float(np.sum(disc * flows * h))
        total += math.exp(-params.rho * (params.T - start.t)) * sc.terminal_reward(
            path.S[-1], path.Q[-1], params
        )
        assert path.discounted_reward == pytest.approx(total, rel=1e-9)

    def test_single_path_matches_first_estimator_stream(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        path = sc.simulate_controlled_path(params, smoothed, START, dt=0.01, seed=21)
        again = sc.simulate_controlled_path(params, smoothed, START, dt=0.01, seed=21)
        assert np.array_equal(path.S, again.S)
        assert np.array_equal(path.Q, again.Q)
        report = sc.estimate_J(
            params, smoothed, [START], n_paths=1, dt=0.01, seed=21, antithetic=False
        )
        # path index 0 of the estimator uses the same per-path stream
        assert report.mean[0] == path.discounted_reward
        assert report.standard_error[0] == 0.0


class TestEstimator:
    def test_threads_do_not_change_results(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        kw = dict(n_paths=64, dt=0.01, seed=13)
        serial = sc.estimate_J(params, smoothed, [START], threads=1, **kw)
        pooled = sc.estimate_J(params, smoothed, [START], threads=4, **kw)
        assert serial.mean[0] == pooled.mean[0]
        assert serial.standard_error[0] == pooled.standard_error[0]

    def test_seed_changes_estimate(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        kw = dict(n_paths=32, dt=0.01)
        rep3 = sc.estimate_J(params, smoothed, [START], seed=3, **kw)
        rep4 = sc.estimate_J(params, smoothed, [START], seed=4, **kw)
        assert rep3.mean[0] != rep4.mean[0]

    def test_antithetic_reduces_error(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        kw = dict(n_paths=256, dt=5e-3, seed=7)
        paired = sc.estimate_J(params, smoothed, [START], antithetic=True, **kw)
        plain = sc.estimate_J(params, smoothed, [START], antithetic=False, **kw)
        assert paired.standard_error[0] < plain.standard_error[0]

    def test_report_rows_and_grid_value(self, params, reduced_solution, reduced_barriers):
        value, _ = reduced_solution
        _, smoothed = reduced_barriers
        starts = [
            (40.0, 50.0, 0.5, 0.0),
            (25.0, 0.0, 0.2, 0.5),
            sc.SystemState(55.0, 100.0, 0.8, 0.25),
        ]
        report = sc.estimate_J(
            params, smoothed, starts, n_paths=16, dt=0.01, seed=6, value=value
        )
        rows = report.rows()
        assert len(rows) == 3 and len(report.starts) == 3
        for row, st in zip(rows, starts):
            ref = st if isinstance(st, sc.SystemState) else sc.SystemState(*st)
            assert row["s"] == ref.s and row["q"] == ref.q
            assert row["nu1"] == ref.nu1 and row["t"] == ref.t
            assert row["n_paths"] == 16 and row["scheme"] == "plain"
            assert row["grid_value"] == pytest.approx(
                value.at(ref.s, ref.q, ref.nu1, ref.t)
            )
            assert math.isfinite(row["mean"]) and row["standard_error"] >= 0.0

    def test_single_state_start_is_accepted(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        report = sc.estimate_J(
            params, smoothed, sc.SystemState(*START), n_paths=8, dt=0.01, seed=12
        )
        assert report.mean.shape == (1,)


class TestPolicyComparisons:
    def test_shifted_thresholds_do_not_beat_policy(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        kw = dict(n_paths=192, dt=5e-3, seed=31)
        base = sc.estimate_J(params, smoothed, [START], **kw)
        for delta in (-5.0, 5.0):
            worse = sc.estimate_J(params, shift_thresholds(smoothed, delta), [START], **kw)
            gap = worse.mean[0] - base.mean[0]
            noise = 3.0 * math.hypot(worse.standard_error[0], base.standard_error[0])
            assert gap <= noise

    def test_higher_discount_lowers_value(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        impatient = dataclasses.replace(params, rho=2.0 * params.rho)
        kw = dict(n_paths=128, dt=5e-3, seed=41)
        base = sc.estimate_J(params, smoothed, [START], **kw)
        cut = sc.estimate_J(impatient, smoothed, [START], **kw)
        noise = 3.0 * math.hypot(base.standard_error[0], cut.standard_error[0])
        assert cut.mean[0] <= base.mean[0] + noise


class TestTransformedScheme:
    def test_matches_plain_in_distribution(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        # The drift-removing substitution is only well conditioned when the
        # one-step excursion scale is small next to the drift's decay length,
        # so the comparison runs at a step fine enough for both schemes.
        kw = dict(n_paths=256, dt=1e-3, seed=17)
        plain = sc.estimate_J(params, smoothed, [START], scheme="plain", **kw)
        moved = sc.estimate_J(params, smoothed, [START], scheme="transformed", **kw)
        assert moved.rows()[0]["scheme"] == "transformed"
        noise = 3.0 * math.hypot(plain.standard_error[0], moved.standard_error[0])
        assert abs(moved.mean[0] - plain.mean[0]) <= noise

    def test_flags_steps_inside_the_threshold_tube(self, params, reduced_barriers):
        _, smoothed = reduced_barriers
        specs = sc.storage_system_spec(params, smoothed)
        s0 = smoothed.buy(50.0, 0.5, 0.0)  # start exactly on the buying threshold
        path = sc.simulate_controlled_path(
            params,
            smoothed,
            (s0, 50.0, 0.5, 0.0),
            dt=2e-3,
            seed=19,
            scheme="transformed",
            specs=specs,
        )
        assert path.scheme == "transformed"
        assert path.region[0] == 1
        assert path.Q.min() >= params.q_lo and path.Q.max() <= params.q_hi
        assert path.nu.min() >= 0.0 and path.nu.max() <= 1.0
