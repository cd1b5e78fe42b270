"""
완비 Black-Scholes 시장: 할인인자(deflator)와 고정비율 전략 부의 로그정규 분포
"""
import math

from app.exceptions import ParameterError
from app.models import MarketParams, TerminalLaw


def deflator_law(mkt: MarketParams, T: float) -> TerminalLaw:
    """Y_T = exp(-(r + θ²/2)T - θ W_T), E[Y_T] = e^{-rT}"""
    theta = mkt.theta
    return TerminalLaw(
        log_mean=-(mkt.r + 0.5 * theta * theta) * T,
        log_std=abs(theta) * math.sqrt(T),
        horizon=T,
    )


def cp_wealth_law(mkt: MarketParams, pi: float, T: float) -> TerminalLaw:
    """위험자산 비중 pi를 항상 유지하는 전략의 단위 초기자본 부 X^pi_T"""
    return TerminalLaw(
        log_mean=(mkt.r + pi * mkt.mu - 0.5 * (pi * mkt.sigma) ** 2) * T,
        log_std=abs(pi) * mkt.sigma * math.sqrt(T),
        horizon=T,
    )


def merton_weight(mkt: MarketParams, gamma: float) -> float:
    """
    상대 위험회피도 gamma 인 isoelastic 투자자의 최적 위험자산 비중 mu/(gamma sigma²)

    Raises:
        ParameterError: gamma <= 0
    """
    if not gamma > 0:
        raise ParameterError(f"Relative risk aversion must be positive, got gamma={gamma}")
    return mkt.mu / (gamma * mkt.sigma ** 2)


def budget_identity(mkt: MarketParams, pi: float, T: float) -> TerminalLaw:
    """
    같은 브라운 운동 W_T 위에서 X^pi_T · Y_T 의 분포.
    지수의 W_T 계수는 pi·sigma - theta 이고 평균은 항상 1 (마팅게일 성질)
    """
    c = pi * mkt.sigma - mkt.theta
    return TerminalLaw(log_mean=-0.5 * c * c * T, log_std=abs(c) * math.sqrt(T), horizon=T)
