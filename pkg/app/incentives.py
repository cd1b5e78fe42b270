"""
관리자 보상 계약: 옵션 부여의 사적 가치, 거듭제곱 인센티브의 유효 위험회피도,
행사가 격자 위 Carr-Madan 정적 복제.
"""
import math
from typing import Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.config import config
from app.exceptions import CoverageError, ParameterError, WellposednessError
from app.logging_config import logger
from app.models import Contract, MarketParams
from app.numerics import expect_normal, gauss_hermite
from app.schemas import GammaStarPoint, GrantCurvePoint, ReplicationRow
from app.solver import evaluate_payoff, isoelastic_closed_form, solve_terminal, sweep_horizons
from app.utility import Isoelastic, Logarithmic, UtilityBase, concave_envelope, effective_utility


# --- 유효 위험회피도 ---

def effective_risk_aversion(alpha: float, gamma: float) -> float:
    """
    보상 x^alpha 를 받는 위험회피도 gamma 관리자의 유효 위험회피도 alpha·gamma + 1 - alpha

    Raises:
        ParameterError: alpha <= 0 또는 gamma <= 0
        WellposednessError: 결과가 0 이하 (유효효용이 볼록)
    """
    if not alpha > 0:
        raise ParameterError(f"Incentive power must be positive, got alpha={alpha}")
    if not gamma > 0:
        raise ParameterError(f"Risk aversion must be positive, got gamma={gamma}")
    gamma_star = alpha * gamma + 1.0 - alpha
    if not gamma_star > 0:
        raise WellposednessError(
            f"Effective risk aversion {gamma_star:.6g} <= 0 for alpha={alpha}, gamma={gamma}; "
            f"the incentivized problem has no interior optimum"
        )
    return gamma_star


def reduces_risk_aversion(alpha: float, gamma: float) -> bool:
    """gamma* < gamma 는 (1 - alpha)(1 - gamma) < 0 과 동치"""
    return (1.0 - alpha) * (1.0 - gamma) < 0.0


def alpha_from_performance_fee(fee: float) -> float:
    """운용보수 비율 fee 가 관리자 부에 주는 거듭제곱 (고수위 없는 단순화)"""
    if not 0.0 <= fee < 1.0:
        raise ParameterError(f"Performance fee must lie in [0, 1), got {fee}")
    return 1.0 - fee


def power_incentive_utility(alpha: float, p: float) -> UtilityBase:
    """
    (x^alpha)^p / p 는 양의 상수배를 빼면 x^{alpha p}/(alpha p) 와 같으므로
    최적해와 CE 가 같은 isoelastic 효용을 돌려줌
    """
    if not alpha > 0:
        raise ParameterError(f"Incentive power must be positive, got alpha={alpha}")
    effective_p = alpha * p
    if not effective_p < 1.0:
        raise WellposednessError(f"Effective power alpha*p={effective_p:.6g} must be below 1")
    if effective_p == 0.0:
        return Logarithmic()
    return Isoelastic(p=effective_p)


def gamma_star_check(alpha: float, gamma: float, mkt: MarketParams, T: float, x0: float = 1.0,
                     nodes: Optional[int] = None) -> GammaStarPoint:
    """
    수치 최적화한 인센티브 문제의 CE 와 gamma* 의 Merton 닫힌 형태 CE 비교
    """
    gamma_star = effective_risk_aversion(alpha, gamma)
    u = power_incentive_utility(alpha, 1.0 - gamma)
    solved = solve_terminal(u, mkt, T, x0, nodes)
    closed, weight = isoelastic_closed_form(mkt, 1.0 - gamma_star, T, x0)
    rel_error = abs(solved.certainty_equivalent - closed.certainty_equivalent) / closed.certainty_equivalent
    logger.info(f"gamma* check at T={T}: rel_error={rel_error:.3e}", extra={
        "alpha": alpha, "gamma": gamma, "gamma_star": gamma_star
    })
    return GammaStarPoint(
        horizon=T,
        alpha=alpha,
        gamma=gamma,
        gamma_star=gamma_star,
        weight=weight,
        ce_incentivized=solved.certainty_equivalent,
        ce_closed_form=closed.certainty_equivalent,
        rel_error=rel_error,
    )


# --- 옵션 부여의 사적 가치 ---

def grant_value_curve(p: float, contract: Contract, mkt: MarketParams, horizons: Iterable[float],
                      x0: float = 1.0, nodes: Optional[int] = None,
                      workers: Optional[int] = None) -> List[GrantCurvePoint]:
    """
    옵션 부여 계약과 옵션을 뺀 계약의 CE 를 포락선 효용으로 비교

    Args:
        p: 관리자 isoelastic 효용의 p
        contract: 보상 계약 (옵션 레그 포함)
        horizons: 만기 목록 (만기별 독립 계산)
        workers: 병렬 스레드 수 (없으면 설정값)

    Returns:
        List[GrantCurvePoint]: 입력 만기 순서
    """
    incentivized = effective_utility(p, contract)
    envelope = concave_envelope(incentivized, grid_size=config.numerics.hull_grid_size)
    plain = effective_utility(p, contract.without_options())
    workers = workers or config.experiments.workers

    def point(T: float) -> GrantCurvePoint:
        optimal = solve_terminal(envelope, mkt, T, x0, nodes)
        private = solve_terminal(plain, mkt, T, x0, nodes)
        eu_plain, error = evaluate_payoff(envelope, plain, private.multiplier, mkt, T, nodes)
        ce_plain = envelope.inverse_value(eu_plain)
        premium = optimal.certainty_equivalent / ce_plain - 1.0
        if premium < -1e-8:
            logger.warning(f"Negative grant premium at T={T}: {premium:.3e}", extra={
                "horizon": T, "quad_error": max(optimal.quad_error, error)
            })
        return GrantCurvePoint(
            horizon=T,
            ce_plain=ce_plain,
            ce_incentivized=optimal.certainty_equivalent,
            premium=premium,
            ce_private_plain=private.certainty_equivalent,
            quad_error=max(optimal.quad_error, error),
        )

    points = sweep_horizons(point, horizons, workers)
    logger.info(f"Grant value curve computed for {len(points)} horizon(s)", extra={
        "p": p, "strikes": contract.strikes, "premiums": [pt.premium for pt in points]
    })
    return points


# --- Carr-Madan 정적 복제 ---

class ReplicationPortfolio(BaseModel):
    """
    f(x) = x^alpha 의 정적 복제: 현금 f(kbar), 선도 f'(kbar), 행사가 셀 중점의
    풋/콜 (가중치 f''(k)·Δk)
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha: float
    kbar: float
    cash: float
    forward: float
    put_strikes: np.ndarray
    put_quantities: np.ndarray
    call_strikes: np.ndarray
    call_quantities: np.ndarray
    lower: float
    upper: float

    @property
    def put_legs(self) -> List[Tuple[float, float]]:
        return list(zip(self.put_strikes.tolist(), self.put_quantities.tolist()))

    @property
    def call_legs(self) -> List[Tuple[float, float]]:
        return list(zip(self.call_strikes.tolist(), self.call_quantities.tolist()))


def strike_grid(k_min: float, k_max: float, n_strikes: int, spacing: str = "geometric") -> np.ndarray:
    if not 0 < k_min < k_max or n_strikes < 2:
        raise ParameterError(f"Invalid strike grid: k_min={k_min}, k_max={k_max}, n={n_strikes}")
    if spacing == "geometric":
        return np.geomspace(k_min, k_max, n_strikes)
    if spacing == "uniform":
        return np.linspace(k_min, k_max, n_strikes)
    raise ParameterError(f"Unknown strike spacing '{spacing}' (expected geometric or uniform)")


def carr_madan_legs(alpha: float, kbar: float, strikes) -> ReplicationPortfolio:
    """
    x^alpha 의 정적 복제 포트폴리오

    Args:
        alpha: 거듭제곱 (> 0)
        kbar: 전개 기준점 (>= 0). 0 이면 풋 없이 콜만 사용
        strikes: 행사가 격자 (셀 경계)

    Raises:
        ParameterError: alpha <= 0, kbar < 0, 격자 비어있음, 또는 kbar=0 에서 f'(0) 발산 (alpha < 1)
    """
    if not alpha > 0:
        raise ParameterError(f"Replication power must be positive, got alpha={alpha}")
    if kbar < 0:
        raise ParameterError(f"Expansion point must be non-negative, got kbar={kbar}")
    if kbar == 0 and alpha < 1:
        raise ParameterError(f"x^{alpha} has no finite slope at kbar=0; choose kbar > 0")
    edges = np.asarray(strikes, dtype=float).ravel()
    if edges.size == 0 or np.any(edges < 0) or not np.all(np.isfinite(edges)):
        raise ParameterError("Strike grid must be a non-empty set of finite non-negative strikes")
    edges = np.union1d(edges, [kbar])

    cash = kbar ** alpha
    if kbar == 0:
        forward = 1.0 if alpha == 1 else 0.0
    else:
        forward = alpha * kbar ** (alpha - 1.0)

    empty = np.empty(0)
    if alpha == 1 or edges.size < 2:
        puts = calls = (empty, empty)
    else:
        mids = 0.5 * (edges[:-1] + edges[1:])
        quantities = alpha * (alpha - 1.0) * mids ** (alpha - 2.0) * np.diff(edges)
        below = mids < kbar
        puts = (mids[below], quantities[below])
        calls = (mids[~below], quantities[~below])

    return ReplicationPortfolio(
        alpha=alpha,
        kbar=kbar,
        cash=cash,
        forward=forward,
        put_strikes=puts[0],
        put_quantities=puts[1],
        call_strikes=calls[0],
        call_quantities=calls[1],
        lower=float(edges[0]),
        upper=float(edges[-1]),
    )


def _call_sum(strikes: np.ndarray, quantities: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Σ q_i (x - k_i)^+ (행사가 오름차순)"""
    if strikes.size == 0:
        return np.zeros_like(x)
    s0 = np.concatenate([[0.0], np.cumsum(quantities)])
    s1 = np.concatenate([[0.0], np.cumsum(quantities * strikes)])
    idx = np.searchsorted(strikes, x, side="right")
    return x * s0[idx] - s1[idx]


def _put_sum(strikes: np.ndarray, quantities: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Σ q_i (k_i - x)^+"""
    if strikes.size == 0:
        return np.zeros_like(x)
    s0 = np.concatenate([[0.0], np.cumsum(quantities)])
    s1 = np.concatenate([[0.0], np.cumsum(quantities * strikes)])
    idx = np.searchsorted(strikes, x, side="right")
    return (s1[-1] - s1[idx]) - x * (s0[-1] - s0[idx])


def replicate(portfolio: ReplicationPortfolio, xs) -> Tuple[np.ndarray, float]:
    """
    복제 포트폴리오의 만기 지불액과 x^alpha 대비 최대 상대오차

    Raises:
        CoverageError: 평가 지점이 행사가 격자 [lower, upper] 밖일 때
    """
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    outside = (x < portfolio.lower) | (x > portfolio.upper)
    if np.any(outside):
        raise CoverageError(
            f"{int(outside.sum())} evaluation point(s) outside strike coverage "
            f"[{portfolio.lower:.6g}, {portfolio.upper:.6g}]"
        )
    values = (portfolio.cash + portfolio.forward * (x - portfolio.kbar)
              + _put_sum(portfolio.put_strikes, portfolio.put_quantities, x)
              + _call_sum(portfolio.call_strikes, portfolio.call_quantities, x))
    target = x ** portfolio.alpha
    scale = np.where(target > 0, target, 1.0)
    max_rel_error = float(np.max(np.abs(values - target) / scale))
    return values, max_rel_error


def replication_table(portfolio: ReplicationPortfolio, xs) -> List[ReplicationRow]:
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    values, _ = replicate(portfolio, x)
    target = x ** portfolio.alpha
    scale = np.where(target > 0, target, 1.0)
    return [
        ReplicationRow(x=float(a), value=float(v), target=float(t), rel_error=float(e))
        for a, v, t, e in zip(x, values, target, np.abs(values - target) / scale)
    ]


def risk_neutral_second_moment(s0: float, sigma: float, T: float, nodes: Optional[int] = None) -> float:
    """r = 0 위험중립 측도에서 E[S_T²] (Gauss-Hermite)"""
    if not s0 > 0 or not sigma > 0:
        raise ParameterError(f"Spot and volatility must be positive, got s0={s0}, sigma={sigma}")
    if T < 0:
        raise ParameterError(f"Horizon must be non-negative, got T={T}")
    if T == 0:
        return s0 * s0
    rule = gauss_hermite(nodes or config.numerics.nodes)
    vol = sigma * math.sqrt(T)
    return expect_normal(lambda z: (s0 * np.exp(-0.5 * vol * vol + vol * z)) ** 2, rule)


def square_contract_price(s0: float, sigma: float, T: float, nodes: Optional[int] = None) -> float:
    """e^{-σ²T} S_T² 를 지급하는 계약의 r = 0 가격. 값은 s0² 이어야 함"""
    return math.exp(-sigma * sigma * T) * risk_neutral_second_moment(s0, sigma, T, nodes)
