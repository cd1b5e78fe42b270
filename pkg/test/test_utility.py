import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.exceptions import (
    ContractViolationError,
    DomainError,
    NonDifferentiableError,
    ParameterError,
    RangeError,
    SetValuedError,
)
from app.models import Contract, InterpolationSpec, OptionLeg
from app.utility import (
    Isoelastic,
    Logarithmic,
    ShiftedPower,
    TwoPiecePower,
    concave_envelope,
    dual_eval,
    effective_utility,
    evaluate,
    inverse_marginal,
    marginal,
    minimum_bridge_knot,
    validate_assumptions,
)

GRID = 20000


@pytest.fixture
def grant_utility(single_grant_contract):
    return effective_utility(0.5, single_grant_contract)


@pytest.fixture
def grant_envelope(grant_utility):
    return concave_envelope(grant_utility, grid_size=GRID)


class TestIsoelastic:
    def test_values(self):
        u = Isoelastic(p=-1.0)
        assert evaluate(u, 2.0) == pytest.approx(-0.5)
        assert marginal(u, 2.0) == pytest.approx(0.25)
        assert inverse_marginal(u, 0.25) == pytest.approx(2.0)
        assert dual_eval(u, 0.25) == pytest.approx(-1.0)
        assert u.inverse_value(-0.5) == pytest.approx(2.0)

    def test_dual_is_legendre_transform(self):
        u = Isoelastic(p=0.5)
        xs = np.geomspace(1e-3, 1e3, 20001)
        for y in (0.1, 1.0, 3.0):
            assert u.dual(y) == pytest.approx(np.max(u.value(xs) - xs * y), rel=1e-5)

    def test_zero_power_is_rejected(self):
        with pytest.raises(ValidationError):
            Isoelastic(p=0.0)

    @pytest.mark.parametrize("x", [0.0, -1.0])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            Isoelastic(p=-1.0).value(x)

    def test_inverse_value_out_of_range(self):
        with pytest.raises(RangeError):
            Isoelastic(p=-1.0).inverse_value(0.5)

    def test_arrays_in_arrays_out(self):
        values = Isoelastic(p=-1.0).value([1.0, 2.0, 4.0])
        assert isinstance(values, np.ndarray)
        assert values == pytest.approx([-1.0, -0.5, -0.25])


class TestLogarithmic:
    def test_values(self):
        u = Logarithmic()
        assert u.value(math.e) == pytest.approx(1.0)
        assert u.dual(1.0) == pytest.approx(-1.0)
        assert u.inverse_marginal(0.5) == pytest.approx(2.0)
        assert u.inverse_value(0.0) == pytest.approx(1.0)
        assert u.reference_power == 0.0


class TestShiftedPower:
    def test_values(self):
        u = ShiftedPower(p=-1.0, a=1.0)
        assert u.value(1.0) == pytest.approx(-0.5)
        assert u.corner_slope == pytest.approx(1.0)

    def test_corner_solution_below_corner_slope(self):
        u = ShiftedPower(p=-1.0, a=1.0)
        assert u.inverse_marginal(2.0) == 0.0
        assert u.inverse_marginal(0.25) == pytest.approx(1.0)
        assert u.dual(2.0) == pytest.approx(-1.0)

    def test_inverse_value(self):
        u = ShiftedPower(p=-1.0, a=1.0)
        assert u.inverse_value(u.value(3.0)) == pytest.approx(3.0)


class TestTwoPiecePower:
    def test_minimum_bridge_knot(self):
        assert minimum_bridge_knot(-1.0, -3.0) == pytest.approx(3.0 + math.sqrt(6.0), rel=1e-10)

    def test_infeasible_knot_is_rejected(self):
        with pytest.raises(ParameterError):
            TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=InterpolationSpec(x_hi=4.0))

    def test_p_star_must_be_below_p(self):
        with pytest.raises(ParameterError):
            TwoPiecePower(p=-1.0, p_star=-0.5)

    def test_non_concave_cubic_bridge_is_rejected(self):
        with pytest.raises(ParameterError):
            TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=InterpolationSpec(kind="cubic_hermite", x_hi=8.0))

    def test_pieces_and_continuity(self, counterexample_preset):
        u = TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=counterexample_preset["interp"])
        assert u.value(0.5) == pytest.approx(0.5 ** -3 / -3.0)
        assert u.value(10.0) == pytest.approx(-0.1)
        for knot in (1.0, 8.0):
            assert u.value(knot - 1e-9) == pytest.approx(u.value(knot + 1e-9), abs=1e-7)
            assert u.marginal(knot - 1e-9) == pytest.approx(u.marginal(knot + 1e-9), abs=1e-7)

    def test_concave_bridge(self, counterexample_preset):
        u = TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=counterexample_preset["interp"])
        slopes = u.marginal(np.linspace(0.5, 10.0, 2001))
        assert np.all(np.diff(slopes) <= 0.0)
        assert slopes[0] > slopes[-1]

    def test_inverse_marginal_round_trip(self, counterexample_preset):
        u = TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=counterexample_preset["interp"])
        xs = np.array([0.3, 1.2, 1.5, 20.0])
        assert u.inverse_marginal(u.marginal(xs)) == pytest.approx(xs, rel=1e-9)
        assert u.inverse_value(float(u.value(3.0))) == pytest.approx(3.0, rel=1e-10)

    def test_lowwealth_verdict(self):
        assert not TwoPiecePower(p=-1.0, p_star=-3.0).lowwealth_verdict
        assert TwoPiecePower(p=-1.0, p_star=-1.5).lowwealth_verdict


class TestIncentivized:
    def test_value_at_strike(self, grant_utility):
        assert grant_utility.value(4.0) == pytest.approx(6.0 / math.sqrt(5.0))
        assert grant_utility.corner_slope == pytest.approx(2.0 / math.sqrt(5.0))

    def test_kink_at_strike(self, grant_utility):
        with pytest.raises(NonDifferentiableError) as info:
            grant_utility.marginal(4.0)
        scale = 3.0 * math.sqrt(5.0)
        assert info.value.left_slope == pytest.approx(2.0 / scale)
        assert info.value.right_slope == pytest.approx(5.0 / scale)

    def test_not_concave_with_options(self, grant_utility, single_grant_contract):
        assert not grant_utility.concave
        assert effective_utility(0.5, single_grant_contract.without_options()).concave
        with pytest.raises(ContractViolationError):
            grant_utility.inverse_marginal(0.5)


class TestConcaveEnvelope:
    def test_single_bridge(self, grant_envelope):
        (bridge,) = grant_envelope.bridges
        assert bridge.x_left == pytest.approx(1.3, rel=1e-8)
        assert bridge.x_right == pytest.approx(6.7, rel=1e-8)
        assert bridge.slope == pytest.approx(math.sqrt(2.0) / 3.0, rel=1e-8)
        assert bridge.x_left < 4.0 < bridge.x_right
        assert grant_envelope.value(4.0) == pytest.approx(2.0 * math.sqrt(0.72) + 0.9 * math.sqrt(2.0), rel=1e-8)

    def test_dominates_and_touches(self, grant_utility, grant_envelope):
        xs = np.linspace(0.01, 30.0, 100_000)
        gap = grant_envelope.value(xs) - grant_utility.value(xs)
        assert np.all(gap >= -1e-12)
        bridge = grant_envelope.bridges[0]
        outside = (xs < bridge.x_left) | (xs > bridge.x_right)
        assert gap[outside] == pytest.approx(0.0, abs=1e-12)

    def test_envelope_is_concave(self, grant_envelope):
        slopes = grant_envelope.marginal(np.linspace(0.05, 30.0, 4001))
        assert np.all(np.diff(slopes) <= 1e-12)

    def test_inverse_marginal_is_set_valued_on_bridge_slope(self, grant_envelope):
        bridge = grant_envelope.bridges[0]
        with pytest.raises(SetValuedError) as info:
            grant_envelope.inverse_marginal(bridge.slope)
        assert info.value.lower == pytest.approx(bridge.x_left)
        assert info.value.upper == pytest.approx(bridge.x_right)
        with pytest.raises(SetValuedError):
            grant_envelope.inverse_marginal(np.array([0.1, bridge.slope]))

        lower, upper = grant_envelope.inverse_marginal_interval(bridge.slope)
        assert (lower, upper) == pytest.approx((bridge.x_left, bridge.x_right))
        lower, upper = grant_envelope.inverse_marginal_interval(np.array([0.9, 1.1]) * bridge.slope)
        assert np.array_equal(lower, upper)
        assert upper[0] > bridge.x_right and upper[1] < bridge.x_left

    def test_inverse_marginal_off_bridge_slope(self, grant_envelope):
        # 모서리 기울기 위에서는 0
        assert grant_envelope.inverse_marginal(1.0) == 0.0
        assert grant_envelope.inverse_marginal_interval(1.0) == (0.0, 0.0)
        assert Isoelastic(p=-1.0).inverse_marginal_interval(0.25) == pytest.approx((2.0, 2.0))

    def test_inverse_value_on_bridge(self, grant_envelope):
        assert grant_envelope.inverse_value(float(grant_envelope.value(4.0))) == pytest.approx(4.0, rel=1e-10)

    def test_two_strikes_give_two_bridges(self, two_strike_contract):
        u = effective_utility(0.5, two_strike_contract)
        envelope = concave_envelope(u, grid_size=GRID)
        assert len(envelope.bridges) == 2
        for bridge in envelope.bridges:
            assert bridge.x_left < bridge.x_right
            left = float(u._marginal(np.array([bridge.x_left]))[0])
            right = float(u._marginal(np.array([bridge.x_right]))[0])
            assert left == pytest.approx(bridge.slope, rel=1e-8)
            assert right == pytest.approx(bridge.slope, rel=1e-8)

    def test_concave_input_has_no_bridges(self, single_grant_contract):
        envelope = concave_envelope(effective_utility(0.5, single_grant_contract.without_options()))
        assert envelope.bridges == ()


class TestValidateAssumptions:
    @pytest.mark.parametrize("u, p_ref", [
        (Isoelastic(p=-1.0), -1.0),
        (ShiftedPower(p=-1.0, a=1.0), -1.0),
        (Logarithmic(), 0.0),
        (Isoelastic(p=0.5), 0.5),
    ])
    def test_well_behaved_utilities_pass(self, u, p_ref):
        report = validate_assumptions(u, p_ref)
        assert report.marginal_converged
        assert report.lowwealth_ok

    def test_two_piece_fails_lowwealth(self, counterexample_preset):
        u = TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=counterexample_preset["interp"])
        report = validate_assumptions(u, -1.0)
        assert report.marginal_converged
        assert not report.lowwealth_ok
        assert report.analytic_lowwealth_verdict is False


class TestNegativePowerEnvelope:
    def test_single_strike_matches_tangency_solution(self, single_grant_contract):
        u = effective_utility(-1.0, single_grant_contract)
        envelope = concave_envelope(u, grid_size=GRID)
        (bridge,) = envelope.bridges
        # 지불액 1 + 2x 와 5x - 11 위의 공통 접선
        k = math.sqrt(2.5)
        left_payoff = 2.7 / (1.0 - 1.0 / k)
        assert bridge.x_left == pytest.approx((left_payoff - 1.0) / 2.0, rel=1e-8)
        assert bridge.x_right == pytest.approx((k * left_payoff + 11.0) / 5.0, rel=1e-8)
        assert bridge.x_left < 4.0 < bridge.x_right
        for x in (bridge.x_left, bridge.x_right):
            assert float(u._marginal(np.array([x]))[0]) == pytest.approx(bridge.slope, rel=1e-8)

    def test_two_close_strikes(self):
        legs = (OptionLeg(quantity=1.0, strike=2.0), OptionLeg(quantity=1.0, strike=2.5))
        contract = Contract(c1=0.0, c2=1.0, legs=legs)
        u = effective_utility(-2.0, contract)
        envelope = concave_envelope(u, grid_size=GRID)
        assert envelope.bridges
        for bridge in envelope.bridges:
            assert any(bridge.x_left < k < bridge.x_right for k in contract.strikes)
            for x in (bridge.x_left, bridge.x_right):
                assert float(u._marginal(np.array([x]))[0]) == pytest.approx(bridge.slope, rel=1e-8)
        xs = np.linspace(0.05, 20.0, 100_000)
        assert np.all(envelope.value(xs) - u.value(xs) >= -1e-10)
        assert np.all(np.diff(envelope.marginal(xs)) <= 1e-12)


def _utility_family(kind, counterexample_preset, single_grant_contract):
    """(효용, 기준 p)"""
    if kind == "two_piece":
        return TwoPiecePower(p=-1.0, p_star=-3.0, interpolation=counterexample_preset["interp"]), -1.0
    if kind == "grant":
        return effective_utility(0.5, single_grant_contract), 0.5
    if kind == "envelope":
        return concave_envelope(effective_utility(0.5, single_grant_contract), grid_size=GRID), 0.5
    return {
        "isoelastic": (Isoelastic(p=-1.0), -1.0),
        "power": (Isoelastic(p=0.5), 0.5),
        "log": (Logarithmic(), 0.0),
        "shifted": (ShiftedPower(p=-1.0, a=1.0), -1.0),
    }[kind]


CONCAVE_KINDS = ["isoelastic", "power", "log", "shifted", "two_piece", "envelope"]


@pytest.fixture(params=CONCAVE_KINDS + ["grant"])
def any_family(request, counterexample_preset, single_grant_contract):
    return _utility_family(request.param, counterexample_preset, single_grant_contract)


@pytest.fixture(params=CONCAVE_KINDS)
def concave_family(request, counterexample_preset, single_grant_contract):
    return _utility_family(request.param, counterexample_preset, single_grant_contract)


def _away_from(points, marks, gap=1e-3):
    marks = np.array([m for m in marks if np.isfinite(m) and m > 0])
    if marks.size == 0:
        return points
    distance = np.min(np.abs(np.log(points[:, None] / marks[None, :])), axis=1)
    return points[distance > gap]


class TestUtilityInvariants:
    def test_marginal_matches_finite_differences(self, any_family):
        u, _ = any_family
        rng = np.random.default_rng(17)
        xs = _away_from(np.exp(rng.uniform(math.log(0.05), math.log(50.0), 1000)), u.knots)
        h = 1e-5 * xs
        slopes = (evaluate(u, xs + h) - evaluate(u, xs - h)) / (2.0 * h)
        assert slopes == pytest.approx(marginal(u, xs), rel=1e-6)

    def test_dual_derivative_is_minus_inverse_marginal(self, concave_family):
        u, _ = concave_family
        rng = np.random.default_rng(23)
        ys = _away_from(np.exp(rng.uniform(math.log(1e-3), math.log(10.0), 1000)), u.kinks)
        h = 1e-6 * ys
        slopes = (dual_eval(u, ys + h) - dual_eval(u, ys - h)) / (2.0 * h)
        assert slopes == pytest.approx(-inverse_marginal(u, ys), rel=1e-6, abs=1e-9)

    @pytest.mark.parametrize("y", [1e-8, 1e-10, 1e-12])
    def test_inverse_marginal_follows_reference_power_at_low_slopes(self, concave_family, y):
        u, p = concave_family
        assert 0.99 <= inverse_marginal(u, y) * y ** (1.0 / (1.0 - p)) <= 1.01
