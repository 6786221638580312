"""Finite-difference solver tests against closed-form and structural oracles."""

import io
import math

import numpy as np
import pytest

from bidask import (
    GridSpec,
    PriceSurface,
    PricingProblem,
    ScalarFunctionSpec,
    UncertaintyBand,
    black_scholes_closed_form,
    solve_bsb_ask,
    solve_bsb_bid,
    solve_bsb_pair,
    solve_g_heat,
    write_surface_file,
)

S0 = 100.0
K = 100.0
R = 0.05
T = 1.0


def log_domain(sigma_hi, maturity=T, spot=S0):
    half = 8.0 * sigma_hi * math.sqrt(maturity)
    return (spot * math.exp(-half), spot * math.exp(half))


def call_problem(band, rate=R, maturity=T, strike=K):
    return PricingProblem(ScalarFunctionSpec.call(strike), maturity, rate, band,
                          log_domain(band.sigma_hi, maturity))


BAND_FLAT = UncertaintyBand(0.01, 0.05, 0.2, 0.2)
BAND_WIDE = UncertaintyBand(0.01, 0.05, 0.1, 0.3)


class TestClosedForm:
    def test_published_atm_value(self):
        # frozen reference: S=K=100, r=5%, sigma=20%, T=1
        assert black_scholes_closed_form(100, 100, 0.05, 0.2, 1.0, "call") == \
            pytest.approx(10.4506, abs=5e-5)

    def test_deterministic_limit(self):
        v = black_scholes_closed_form(100, 80, 0.05, 1e-10, 1.0, "call")
        assert v == pytest.approx(100 - 80 * math.exp(-0.05), rel=1e-12)

    def test_put_call_parity(self):
        c = black_scholes_closed_form(100, 90, 0.03, 0.25, 2.0, "call")
        p = black_scholes_closed_form(100, 90, 0.03, 0.25, 2.0, "put")
        assert c - p == pytest.approx(100 - 90 * math.exp(-0.06), rel=1e-12)

    def test_rejects_nonpositive_inputs(self):
        for bad in [dict(spot=-1.0), dict(sigma=0.0), dict(T=0.0), dict(strike=0.0)]:
            kw = dict(spot=100.0, strike=100.0, r=0.05, sigma=0.2, T=1.0)
            kw.update(bad)
            with pytest.raises(ValueError):
                black_scholes_closed_form(kw["spot"], kw["strike"], kw["r"],
                                          kw["sigma"], kw["T"], "call")

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            black_scholes_closed_form(100, 100, 0.05, 0.2, 1.0, "straddle")


class TestValidation:
    def test_grid_too_coarse(self):
        with pytest.raises(ValueError):
            GridSpec(8, 100)
        with pytest.raises(ValueError):
            GridSpec(100, 8)

    def test_unknown_stretching(self):
        with pytest.raises(ValueError):
            GridSpec(100, 100, "chebyshev")

    def test_problem_rejects_negative_payoff(self):
        with pytest.raises(ValueError, match="nonnegative"):
            PricingProblem(ScalarFunctionSpec.negation(), 1.0, 0.05, BAND_FLAT,
                           (1.0, 200.0))

    def test_problem_rejects_bad_domain(self):
        with pytest.raises(ValueError):
            PricingProblem(ScalarFunctionSpec.call(100.0), 1.0, 0.05, BAND_FLAT,
                           (-1.0, 200.0))
        with pytest.raises(ValueError):
            PricingProblem(ScalarFunctionSpec.call(100.0), 1.0, 0.05, BAND_FLAT,
                           (200.0, 100.0))

    def test_problem_rejects_nonpositive_maturity(self):
        with pytest.raises(ValueError):
            PricingProblem(ScalarFunctionSpec.call(100.0), 0.0, 0.05, BAND_FLAT,
                           (1.0, 200.0))

    def test_log_grid_needs_positive_domain(self):
        prob = PricingProblem(ScalarFunctionSpec.call(100.0), 1.0, 0.05, BAND_FLAT,
                              (0.0, 400.0))
        with pytest.raises(ValueError, match="positive"):
            solve_bsb_ask(prob, GridSpec(64, 64, "uniform_log"))

    def test_surface_shape_mismatch(self):
        with pytest.raises(ValueError):
            PriceSurface(np.array([0.0, 1.0]), np.array([1.0, 2.0]),
                         np.zeros((3, 2)), "ask")


class TestBlackScholesReduction:
    def test_atm_call_within_a_tenth_percent(self):
        ask, bid = solve_bsb_pair(call_problem(BAND_FLAT), GridSpec(400, 400))
        oracle = black_scholes_closed_form(S0, K, R, 0.2, T, "call")
        assert ask.value_at(0.0, S0) == pytest.approx(oracle, rel=1e-3)
        assert bid.value_at(0.0, S0) == pytest.approx(oracle, rel=1e-3)

    def test_ask_equals_bid_when_band_flat(self):
        ask, bid = solve_bsb_pair(call_problem(BAND_FLAT), GridSpec(200, 200))
        assert np.allclose(ask.values, bid.values, atol=1e-9 * S0)

    def test_put_reduction(self):
        prob = PricingProblem(ScalarFunctionSpec.put(K), T, R, BAND_FLAT,
                              log_domain(0.2))
        ask = solve_bsb_ask(prob, GridSpec(400, 400))
        oracle = black_scholes_closed_form(S0, K, R, 0.2, T, "put")
        assert ask.value_at(0.0, S0) == pytest.approx(oracle, rel=1.5e-3)

    def test_grid_convergence_first_order_or_better(self):
        oracle = black_scholes_closed_form(S0, K, R, 0.2, T, "call")
        errs = []
        for n in (100, 200, 400):
            ask = solve_bsb_ask(call_problem(BAND_FLAT), GridSpec(n, n))
            errs.append(abs(ask.value_at(0.0, S0) - oracle))
        assert errs[0] / errs[1] >= 2.0
        assert errs[1] / errs[2] >= 2.0

    def test_uniform_price_stretching(self):
        prob = PricingProblem(ScalarFunctionSpec.call(K), T, R, BAND_FLAT,
                              (20.0, 320.0))
        ask = solve_bsb_ask(prob, GridSpec(400, 400, "uniform_price"))
        oracle = black_scholes_closed_form(S0, K, R, 0.2, T, "call")
        assert ask.value_at(0.0, S0) == pytest.approx(oracle, rel=5e-3)


class TestConvexEndpoints:
    def test_call_ask_hits_upper_vol(self):
        ask = solve_bsb_ask(call_problem(BAND_WIDE), GridSpec(400, 400))
        oracle = black_scholes_closed_form(S0, K, R, 0.3, T, "call")
        assert ask.value_at(0.0, S0) == pytest.approx(oracle, rel=2e-3)

    def test_call_bid_hits_lower_vol(self):
        bid = solve_bsb_bid(call_problem(BAND_WIDE), GridSpec(400, 400))
        oracle = black_scholes_closed_form(S0, K, R, 0.1, T, "call")
        assert bid.value_at(0.0, S0) == pytest.approx(oracle, rel=2e-3)

    def test_scheme_preserves_convexity(self):
        # convex to roundoff on the inner +-6 sigma core; the layer where the
        # Dirichlet asymptote truncates the domain may dip by its O(1e-6)
        # error, diffused O(sigma sqrt(T)/h) nodes inward
        ask = solve_bsb_ask(call_problem(BAND_WIDE), GridSpec(200, 200))
        x = ask.space_nodes
        for i in (0, 50, 100, 150, 200):
            u = ask.values[i]
            hm = x[1:-1] - x[:-2]
            hp = x[2:] - x[1:-1]
            d2 = 2.0 * ((u[2:] - u[1:-1]) / hp - (u[1:-1] - u[:-2]) / hm) / (hm + hp)
            assert d2[32:-32].min() >= -1e-10
            assert d2.min() >= -1e-6


class TestStructure:
    def test_linear_payoff_is_forward_value(self):
        # d2u/dx2 = 0 makes the equation linear; u(t, x) = x at every time
        prob = PricingProblem(ScalarFunctionSpec.identity(), T, R, BAND_WIDE,
                              log_domain(0.3))
        ask = solve_bsb_ask(prob, GridSpec(200, 200))
        for i in (0, 77, 200):
            assert np.allclose(ask.values[i], ask.space_nodes, rtol=1e-5)

    def test_zero_payoff_stays_zero(self):
        zero = ScalarFunctionSpec.piecewise_linear([(1.0, 0.0), (1000.0, 0.0)])
        prob = PricingProblem(zero, T, R, BAND_WIDE, log_domain(0.3))
        bid = solve_bsb_bid(prob, GridSpec(100, 100))
        assert np.all(bid.values == 0.0)

    def test_terminal_slice_is_exact_payoff(self):
        ask = solve_bsb_ask(call_problem(BAND_WIDE), GridSpec(150, 64))
        payoff = ScalarFunctionSpec.call(K)(ask.space_nodes)
        assert np.array_equal(ask.values[-1], payoff)

    def test_strike_node_is_snapped(self):
        ask = solve_bsb_ask(call_problem(BAND_WIDE), GridSpec(150, 64))
        assert np.min(np.abs(ask.space_nodes - K)) == 0.0

    def test_ask_dominates_bid_pointwise(self):
        ask, bid = solve_bsb_pair(call_problem(BAND_WIDE), GridSpec(150, 150))
        assert np.all(ask.values - bid.values >= -1e-8)

    def test_band_widening_monotonicity(self):
        base_ask, base_bid = solve_bsb_pair(call_problem(BAND_WIDE), GridSpec(100, 100))
        wider = UncertaintyBand(0.01, 0.05, 0.05, 0.35)
        prob = PricingProblem(ScalarFunctionSpec.call(K), T, R, wider,
                              log_domain(0.3))  # same domain, same nodes
        wide_ask, wide_bid = solve_bsb_pair(prob, GridSpec(100, 100))
        assert np.all(wide_ask.values - base_ask.values >= -1e-8)
        assert np.all(wide_bid.values - base_bid.values <= 1e-8)

    def test_comparison_principle(self):
        lo = PricingProblem(ScalarFunctionSpec.call(110.0), T, R, BAND_WIDE,
                            log_domain(0.3))
        hi = PricingProblem(ScalarFunctionSpec.call(90.0), T, R, BAND_WIDE,
                            log_domain(0.3))
        u_lo = solve_bsb_ask(lo, GridSpec(100, 100))
        u_hi = solve_bsb_ask(hi, GridSpec(100, 100))
        assert np.all(u_hi.values - u_lo.values >= -1e-8)
        b_lo = solve_bsb_bid(lo, GridSpec(100, 100))
        b_hi = solve_bsb_bid(hi, GridSpec(100, 100))
        assert np.all(b_hi.values - b_lo.values >= -1e-8)


class TestGHeat:
    def test_linear_data_zero_drift_is_invariant(self):
        band = UncertaintyBand(0.0, 0.0, 0.1, 0.3)
        surf = solve_g_heat(ScalarFunctionSpec.identity(), band, 1.0,
                            GridSpec(128, 128))
        for i in (0, 64, 128):
            assert np.allclose(surf.values[i], surf.space_nodes, atol=1e-9)

    def test_linear_data_picks_upper_drift(self):
        band = UncertaintyBand(0.01, 0.05, 0.1, 0.3)
        surf = solve_g_heat(ScalarFunctionSpec.identity(), band, 1.0,
                            GridSpec(128, 128))
        for t in (0.25, 0.5, 1.0):
            assert surf.value_at(t, 0.0) == pytest.approx(0.05 * t, abs=1e-8)

    def test_negated_linear_data_picks_lower_drift(self):
        band = UncertaintyBand(0.01, 0.05, 0.1, 0.3)
        surf = solve_g_heat(ScalarFunctionSpec.negation(), band, 1.0,
                            GridSpec(128, 128))
        assert surf.value_at(1.0, 0.0) == pytest.approx(-0.01, abs=1e-8)

    def test_quadratic_data_grows_at_upper_variance(self):
        band = UncertaintyBand(0.0, 0.0, 0.1, 0.3)
        surf = solve_g_heat(ScalarFunctionSpec.power(2), band, 1.0,
                            GridSpec(200, 200))
        assert surf.value_at(1.0, 0.0) == pytest.approx(0.09, rel=1e-6)

    def test_rejects_nonpositive_horizon(self):
        band = UncertaintyBand(0.0, 0.0, 0.1, 0.3)
        with pytest.raises(ValueError):
            solve_g_heat(ScalarFunctionSpec.identity(), band, -1.0, GridSpec(64, 64))


class TestSurfaceLookup:
    def test_bilinear_interpolation_between_slices(self):
        times = np.array([0.0, 1.0])
        nodes = np.array([0.0, 1.0, 2.0])
        vals = np.array([[0.0, 1.0, 2.0], [0.0, 2.0, 4.0]])
        s = PriceSurface(times, nodes, vals, "heat")
        assert s.value_at(0.5, 1.0) == pytest.approx(1.5)
        assert s.value_at(0.0, 0.5) == pytest.approx(0.5)

    def test_delta_slice_of_linear_surface(self):
        times = np.array([0.0, 1.0])
        nodes = np.linspace(0.0, 4.0, 9)
        vals = np.vstack([3.0 * nodes, 3.0 * nodes])
        s = PriceSurface(times, nodes, vals, "heat")
        assert np.allclose(s.delta_slice(0.3), 3.0)

    def test_matrix_serialization_round_trip(self):
        ask = solve_bsb_ask(call_problem(BAND_WIDE), GridSpec(32, 16))
        buf = io.StringIO()
        write_surface_file(ask, buf)
        lines = buf.getvalue().strip().splitlines()
        header = lines[0].split(",")
        assert header[0] == "time\\space"
        assert len(header) == len(ask.space_nodes) + 1
        assert len(lines) == len(ask.times) + 1
        row = lines[-1].split(",")
        assert float(row[0]) == pytest.approx(ask.times[-1])
        got = np.array([float(v) for v in row[1:]])
        assert np.allclose(got, ask.values[-1], rtol=1e-11)
