import math

import numpy as np
import pytest
from scipy.stats import norm

from app.counterexample import (
    ce_collapse_curve,
    check_param_restriction,
    divergence_exponent,
    isoelastic_utility_ratio,
    log_slope,
    lowwealth_ratio_closed_form,
    lowwealth_ratio_quadrature,
)
from app.exceptions import ParameterError, PreconditionError
from app.models import InterpolationSpec, MarketParams
from app.solver import ce_ratio
from app.utility import TwoPiecePower


class TestParamRestriction:
    def test_preset_is_satisfied(self, market):
        report = check_param_restriction(market, -1.0, -3.0)
        assert report.lhs == pytest.approx(1.0)
        assert report.rhs == pytest.approx(0.5)
        assert report.satisfied
        assert report.margin == pytest.approx(0.5)

    def test_high_rate_breaks_restriction(self):
        report = check_param_restriction(MarketParams(mu=0.08, sigma=0.2, r=0.03), -1.0, -3.0)
        assert not report.satisfied

    def test_p_star_close_to_boundary_raises_rhs(self, market):
        assert check_param_restriction(market, -1.0, -2.01).rhs == pytest.approx(50.0, rel=1e-9)

    @pytest.mark.parametrize("p, p_star", [(0.5, -3.0), (-1.0, -2.0), (-1.0, -1.5)])
    def test_powers_outside_counterexample_region(self, market, p, p_star):
        with pytest.raises(ParameterError):
            check_param_restriction(market, p, p_star)

    def test_restriction_implies_positive_exponent(self):
        rng = np.random.default_rng(2024)
        satisfied = 0
        for _ in range(1000):
            mkt = MarketParams(mu=rng.uniform(0.01, 0.2), sigma=rng.uniform(0.05, 0.5), r=rng.uniform(0.001, 0.05))
            p = rng.uniform(-4.0, -0.01)
            p_star = p - 1.0 - rng.uniform(0.01, 3.0)
            if check_param_restriction(mkt, p, p_star).satisfied:
                satisfied += 1
                assert divergence_exponent(mkt, p, p_star) > 0.0
        assert satisfied >= 20


class TestDivergenceExponent:
    def test_preset_value(self, market):
        assert divergence_exponent(market, -1.0, -3.0) == pytest.approx(0.02)

    def test_vanishes_when_powers_agree(self, market):
        assert divergence_exponent(market, -1.0, -1.0, strict=False) == 0.0


class TestLowWealthRatio:
    @pytest.mark.parametrize("T", [1.0, 10.0, 50.0])
    def test_closed_form(self, market, T):
        report = lowwealth_ratio_closed_form(market, -1.0, -3.0, T)
        assert report.qstar_prob == pytest.approx(norm.cdf(0.25 * math.sqrt(T)))
        assert report.lowwealth_ratio == pytest.approx(math.exp(0.02 * T) * norm.cdf(0.25 * math.sqrt(T)), rel=1e-12)

    @pytest.mark.parametrize("T", [1.0, 5.0, 20.0])
    def test_quadrature_agrees_with_closed_form(self, market, T):
        closed = lowwealth_ratio_closed_form(market, -1.0, -3.0, T).lowwealth_ratio
        assert lowwealth_ratio_quadrature(market, -1.0, -3.0, T) == pytest.approx(closed, rel=1e-8)

    def test_short_horizon_limit_is_one_half(self, market):
        assert lowwealth_ratio_closed_form(market, -1.0, -3.0, 1e-10).lowwealth_ratio == pytest.approx(0.5, abs=1e-5)

    def test_grows_with_horizon(self, market):
        ratios = [lowwealth_ratio_closed_form(market, -1.0, -3.0, T).lowwealth_ratio for T in (10, 50, 100, 200)]
        assert np.all(np.diff(ratios) > 0.0)

    def test_needs_positive_drift_and_horizon(self, market):
        with pytest.raises(ParameterError):
            lowwealth_ratio_closed_form(MarketParams(mu=-0.02, sigma=0.2, r=0.01), -1.0, -3.0, 10.0)
        with pytest.raises(ParameterError):
            lowwealth_ratio_closed_form(market, -1.0, -3.0, 0.0)


class TestUtilityRatio:
    def test_grows_at_the_divergence_rate(self, market, counterexample_preset):
        u = TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=counterexample_preset["interp"])
        horizons = [100.0, 150.0, 200.0]
        ratios = [isoelastic_utility_ratio(u, market, T) for T in horizons]
        assert np.all(np.diff(ratios) > 0.0)
        assert 0.014 < log_slope(horizons, ratios) < 0.026

    def test_log_slope_of_exponential(self):
        horizons = [1.0, 2.0, 3.0]
        assert log_slope(horizons, np.exp(0.3 * np.array(horizons))) == pytest.approx(0.3)
        with pytest.raises(ParameterError):
            log_slope([1.0], [1.0])


class TestCollapseCurve:
    def test_ratio_falls_as_horizon_grows(self, market, counterexample_preset):
        horizons = [10.0, 25.0, 50.0, 100.0]
        points = ce_collapse_curve(market, -1.0, -3.0, counterexample_preset["interp"], horizons, workers=1)
        assert [pt.horizon for pt in points] == horizons
        assert all(0.0 < pt.ratio < 1.0 for pt in points)
        assert np.all(np.diff([pt.ratio for pt in points]) < 0.0)
        assert np.all(np.diff([pt.utility_ratio for pt in points]) > 0.0)
        for pt in points:
            assert pt.exponent == pytest.approx(0.02)
            closed = lowwealth_ratio_closed_form(market, -1.0, -3.0, pt.horizon).lowwealth_ratio
            assert pt.lowwealth_ratio == pytest.approx(closed)

    def test_lowwealth_ratio_ignores_bridge(self, market):
        wide = ce_collapse_curve(market, -1.0, -3.0, InterpolationSpec(x_hi=12.0), [20.0], workers=1)
        narrow = ce_collapse_curve(market, -1.0, -3.0, InterpolationSpec(x_hi=8.0), [20.0], workers=1)
        assert wide[0].lowwealth_ratio == narrow[0].lowwealth_ratio
        assert wide[0].utility_ratio != narrow[0].utility_ratio

    def test_restriction_must_hold(self):
        with pytest.raises(PreconditionError):
            ce_collapse_curve(MarketParams(mu=0.08, sigma=0.2, r=0.03), -1.0, -3.0,
                              InterpolationSpec(x_hi=8.0), [10.0], workers=1)


class TestLowWealthConditionHolds:
    def test_ratio_recovers_when_p_star_is_not_too_low(self, market):
        # p* >= p - 1: 저자산 조건이 성립하면 CE 비율이 1로 돌아옴
        u = TwoPiecePower(p=-1.0, p_star=-1.5, interpolation=InterpolationSpec(kind="exp_marginal", x_hi=8.0))
        assert u.lowwealth_verdict
        ratios = [ce_ratio(u, market, -1.0, T).ratio for T in (50.0, 100.0, 200.0)]
        assert np.all(np.diff(ratios) > 0.0)
        assert all(r < 1.0 for r in ratios)
        assert ratios[-1] > 0.98
