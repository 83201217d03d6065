"""Model primitives: rewards, rate bounds, seasonality, validation."""

import dataclasses
import math

import numpy as np
import pytest

from storagecontrol import (
    ModelParams,
    Seasonality,
    preset,
    rate_bounds,
    running_reward,
    seasonality,
    terminal_reward,
)


def smoothstep5(x):
    x = min(max(x, 0.0), 1.0)
    return 6 * x**5 - 15 * x**4 + 10 * x**3


class TestRateBounds:
    def test_endpoints_vanish(self, params):
        lo_at_empty, _ = rate_bounds(params.q_lo, params)
        _, hi_at_full = rate_bounds(params.q_hi, params)
        assert lo_at_empty == 0.0
        assert hi_at_full == 0.0

    def test_plateau_at_mid_capacity(self, params):
        lo, hi = rate_bounds(50.0, params)
        assert lo == -params.M_u
        assert hi == params.M_u

    def test_matches_quintic_ramp(self, params):
        w = params.ramp_width
        for q in [0.0, 1.0, 2.5, 4.0, 5.0, 50.0, 96.0, 99.0, 100.0]:
            lo, hi = rate_bounds(q, params)
            assert hi == pytest.approx(params.M_u * smoothstep5((params.q_hi - q) / w))
            assert lo == pytest.approx(-params.M_u * smoothstep5((q - params.q_lo) / w))

    def test_lipschitz_bound(self, params, rng):
        # steepest quintic slope is 15/8 * M_u / width < 2 M_u / width
        L = 2.0 * params.M_u / params.ramp_width
        q = rng.uniform(params.q_lo, params.q_hi, size=500)
        qp = np.clip(q + rng.uniform(-1.0, 1.0, size=500), params.q_lo, params.q_hi)
        lo, hi = rate_bounds(q, params)
        lop, hip = rate_bounds(qp, params)
        assert np.all(np.abs(hi - hip) <= L * np.abs(q - qp) + 1e-12)
        assert np.all(np.abs(lo - lop) <= L * np.abs(q - qp) + 1e-12)

    def test_vectorized_matches_scalar(self, params):
        q = np.array([0.0, 3.0, 97.0, 100.0])
        lo, hi = rate_bounds(q, params)
        for i, qi in enumerate(q):
            lo_i, hi_i = rate_bounds(float(qi), params)
            assert lo[i] == lo_i and hi[i] == hi_i

    def test_zero_rate_limit_disables_trading(self, params):
        frozen = dataclasses.replace(params, M_u=0.0)
        lo, hi = rate_bounds(50.0, frozen)
        assert lo == 0.0 and hi == 0.0


class TestRunningReward:
    def test_buy_pays_price_plus_friction(self, params):
        # one unit per year bought at s=40 costs 50/year
        assert running_reward(40.0, 50.0, 1.0, params) == pytest.approx(-50.0)

    def test_sell_receives_price_minus_friction(self, params):
        assert running_reward(40.0, 50.0, -1.0, params) == pytest.approx(30.0)

    def test_kink_slope_gap(self, params):
        # d/du is -(s + d_plus) for u>0 and -(s - d_minus) for u<0; the
        # concave kink at u=0 drops the slope by d_plus + d_minus.
        s = 37.0
        eps = 1e-6
        up = (running_reward(s, 50.0, eps, params) - running_reward(s, 50.0, 0.0, params)) / eps
        dn = (running_reward(s, 50.0, 0.0, params) - running_reward(s, 50.0, -eps, params)) / eps
        assert up - dn == pytest.approx(-(params.d_plus + params.d_minus), rel=1e-9)

    def test_storage_cost(self, params):
        costly = dataclasses.replace(params, c0=2.0)
        assert running_reward(40.0, 30.0, 0.0, costly) == pytest.approx(-60.0)

    def test_rejects_inventory_outside_bounds(self, params):
        with pytest.raises(ValueError):
            running_reward(40.0, params.q_hi + 1.0, 0.0, params)

    def test_rejects_rate_outside_bounds(self, params):
        with pytest.raises(ValueError):
            running_reward(40.0, params.q_hi, 1.0, params)  # cannot charge a full store


class TestTerminalReward:
    def test_formula(self, params):
        assert terminal_reward(40.0, 70.0, params) == pytest.approx(70.0 * (0.95 * 40.0 - 10.0))

    def test_empty_store_worthless(self, params):
        assert terminal_reward(123.0, 0.0, params) == 0.0

    def test_vectorized(self, params):
        s = np.array([10.0, 40.0])
        out = terminal_reward(s, 100.0, params)
        assert out.shape == (2,)
        assert out[1] == pytest.approx(100.0 * (0.95 * 40.0 - 10.0))


class TestSeasonality:
    def test_absent_means_zero(self, params):
        assert seasonality(0.37, params) == 0.0

    def test_cosine_peak_and_trough(self, params):
        seasonal = dataclasses.replace(
            params, seasonality=Seasonality(K_S=5.0, t_S=0.25, Delta=1.0)
        )
        assert seasonality(0.25, seasonal) == pytest.approx(5.0)
        assert seasonality(0.75, seasonal) == pytest.approx(-5.0)
        assert seasonality(0.5, seasonal) == pytest.approx(5.0 * math.cos(math.pi / 2), abs=1e-12)

    def test_invalid_period_rejected(self):
        with pytest.raises(ValueError):
            Seasonality(K_S=1.0, t_S=0.0, Delta=0.0)


class TestValidation:
    def test_preset_round_trips_through_json(self, params):
        again = ModelParams.from_json(params.to_json())
        assert again == params

    def test_mu_must_decrease(self, params):
        with pytest.raises(ValueError, match="decreasing"):
            dataclasses.replace(params, mu=(30.0, 50.0))

    def test_rate_matrix_rows_sum_to_zero(self, params):
        with pytest.raises(ValueError, match="sum to zero"):
            dataclasses.replace(params, rate_matrix=((-0.5, 0.4), (0.5, -0.5)))

    def test_rate_matrix_off_diagonal_sign(self, params):
        with pytest.raises(ValueError, match="nonnegative"):
            dataclasses.replace(params, rate_matrix=((0.5, -0.5), (0.5, -0.5)))

    def test_nu0_probability_vector(self, params):
        with pytest.raises(ValueError, match="probability"):
            dataclasses.replace(params, nu0=(0.7, 0.7))

    def test_scrap_rate_range(self, params):
        with pytest.raises(ValueError, match="c_S"):
            dataclasses.replace(params, c_S=1.0)

    def test_ramp_width_capped_by_capacity(self, params):
        with pytest.raises(ValueError, match="ramp_width"):
            dataclasses.replace(params, ramp_width=60.0)

    def test_zero_rate_limit_allowed(self, params):
        frozen = dataclasses.replace(params, M_u=0.0)
        assert frozen.M_u == 0.0

    def test_from_dict_accepts_conventional_names(self, params):
        d = params.to_dict()
        d["Lambda"] = d.pop("rate_matrix")
        d["cS"] = d.pop("c_S")
        assert ModelParams.from_dict(d) == params

    def test_from_dict_rejects_duplicate_spellings(self, params):
        d = params.to_dict()
        d["Lambda"] = d["rate_matrix"]
        with pytest.raises(ValueError, match="not both"):
            ModelParams.from_dict(d)

    def test_from_dict_rejects_unknown_fields(self, params):
        d = params.to_dict()
        d["volatility"] = 1.0
        with pytest.raises(ValueError, match="unknown"):
            ModelParams.from_dict(d)

    def test_unknown_preset(self):
        with pytest.raises(KeyError, match="paper2016"):
            preset("nope")
