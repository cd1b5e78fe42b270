"""공통 픽스처: 기본 시장, 반례 파라미터, 옵션 부여 계약"""
import pytest

from app.models import Contract, InterpolationSpec, MarketParams, OptionLeg


@pytest.fixture
def market() -> MarketParams:
    return MarketParams(mu=0.08, sigma=0.2, r=0.01)


@pytest.fixture
def counterexample_preset():
    """p=-1, p*=-3, 연결 구간 [1, 8]"""
    return {"p": -1.0, "p_star": -3.0, "interp": InterpolationSpec(kind="exp_marginal", x_hi=8.0)}


@pytest.fixture
def single_grant_contract() -> Contract:
    """현금 1, 주식 2, 행사가 4 콜 3개"""
    return Contract(c1=1.0, c2=2.0, legs=(OptionLeg(quantity=3.0, strike=4.0),))


@pytest.fixture
def two_strike_contract() -> Contract:
    return Contract(c1=1.0, c2=2.0, legs=(OptionLeg(quantity=3.0, strike=4.0), OptionLeg(quantity=3.0, strike=40.0)))
