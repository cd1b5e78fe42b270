"""
두 조각 거듭제곱 효용의 반례: 파라미터 제약, 저자산 비율의 닫힌 형태와 적분 검증,
isoelastic 포트폴리오의 CE 비율 붕괴.

저자산 비율 E[X̃^{p*} 1{X̃<=1}] / E[X̃^p] 는 x <= 1 조각만 쓰므로 연결 구간과 무관하다.
"""
import math
from typing import Iterable, List, Optional

import numpy as np

from app.config import config
from app.exceptions import ParameterError, PreconditionError
from app.logging_config import logger
from app.market import cp_wealth_law, merton_weight
from app.models import InterpolationSpec, MarketParams
from app.numerics import expect_normal, gauss_hermite, normal_mass_below, piecewise_rule
from app.schemas import CollapsePoint, DivergenceReport, RestrictionReport
from app.solver import ce_ratio, expected_utility_of_law, sweep_horizons
from app.utility import TwoPiecePower


def _require_counterexample_powers(p: float, p_star: float) -> None:
    if not p < 0:
        raise ParameterError(f"Counterexample requires p < 0, got p={p}")
    if not p_star < p - 1.0:
        raise ParameterError(f"Counterexample requires p_star < p - 1, got p={p}, p_star={p_star}")


def _drift_scale(mkt: MarketParams, p: float) -> float:
    """μ² / (2 (1-p)² σ²)"""
    return mkt.mu ** 2 / (2.0 * (1.0 - p) ** 2 * mkt.sigma ** 2)


def check_param_restriction(mkt: MarketParams, p: float, p_star: float) -> RestrictionReport:
    """
    위험자산이 충분히 매력적인지: (μ/(σ²(1-p)))² > 2 max{1, 1/(p-p*-1)} r/σ²

    Raises:
        ParameterError: p >= 0 또는 p_star >= p - 1
    """
    _require_counterexample_powers(p, p_star)
    lhs = (mkt.mu / (mkt.sigma ** 2 * (1.0 - p))) ** 2
    rhs = 2.0 * max(1.0, 1.0 / (p - p_star - 1.0)) * mkt.r / mkt.sigma ** 2
    margin = lhs - rhs
    return RestrictionReport(lhs=lhs, rhs=rhs, satisfied=margin > 0, margin=margin)


def divergence_exponent(mkt: MarketParams, p: float, p_star: float, strict: bool = True) -> float:
    """
    (p*-p)(r + (p*+1-p) μ²/(2(1-p)²σ²))

    Args:
        strict: False 이면 p* < p-1 검사를 건너뜀 (p* = p 같은 대수적 확인용)
    """
    if strict:
        _require_counterexample_powers(p, p_star)
    return (p_star - p) * (mkt.r + (p_star + 1.0 - p) * _drift_scale(mkt, p))


def _qstar_threshold(mkt: MarketParams, p: float, p_star: float, T: float) -> float:
    """Q* 아래 W*_T/√T 의 임계값"""
    scale = mkt.theta / (1.0 - p)
    level = mkt.r + (1.0 - 2.0 * p + 2.0 * p_star) * _drift_scale(mkt, p)
    return -level * math.sqrt(T) / scale


def lowwealth_ratio_closed_form(mkt: MarketParams, p: float, p_star: float, T: float) -> DivergenceReport:
    """
    E[X̃^{p*} 1{X̃<=1}] / E[X̃^p] = exp(exponent·T) · Φ(threshold)

    X̃ 는 p 의 Merton 고정비율 전략 부. μ > 0 이 필요함
    """
    _require_counterexample_powers(p, p_star)
    if not mkt.mu > 0:
        raise ParameterError(f"Closed form requires a positive excess drift, got mu={mkt.mu}")
    if not T > 0:
        raise ParameterError(f"Horizon must be positive, got T={T}")
    exponent = divergence_exponent(mkt, p, p_star)
    qstar_prob = float(normal_mass_below(_qstar_threshold(mkt, p, p_star, T)))
    return DivergenceReport(
        horizon=T,
        exponent=exponent,
        qstar_prob=qstar_prob,
        lowwealth_ratio=math.exp(exponent * T) * qstar_prob,
    )


def lowwealth_ratio_quadrature(mkt: MarketParams, p: float, p_star: float, T: float,
                               nodes: Optional[int] = None) -> float:
    """닫힌 형태와 독립인 적분 검증: 1{X̃<=1} 은 Z 공간 분할점으로 처리"""
    _require_counterexample_powers(p, p_star)
    nodes = nodes or config.numerics.nodes
    law = cp_wealth_law(mkt, merton_weight(mkt, 1.0 - p), T)
    if law.deterministic:
        raise ParameterError("Low-wealth ratio needs a non-degenerate wealth law")
    z0 = float(law.z_of(1.0))
    rule = piecewise_rule([z0], n_panels=nodes, order=config.numerics.panel_order,
                          width=config.numerics.tail_width)

    def below(z):
        z = np.asarray(z, dtype=float)
        return np.where(z <= z0, np.exp(p_star * law.log_value(np.minimum(z, z0))), 0.0)

    numerator = expect_normal(below, rule)
    denominator = expect_normal(lambda z: np.exp(p * law.log_value(z)), gauss_hermite(nodes))
    return numerator / denominator


def isoelastic_utility_ratio(u: TwoPiecePower, mkt: MarketParams, T: float,
                             nodes: Optional[int] = None) -> float:
    """E[U(X̃_T)] / E[Ũ(X̃_T)], Ũ(x) = x^p/p"""
    p = u.p
    law = cp_wealth_law(mkt, merton_weight(mkt, 1.0 - p), T)
    return expected_utility_of_law(u, law, nodes=nodes) / (law.moment(p) / p)


def log_slope(horizons: Iterable[float], values: Iterable[float]) -> float:
    """log(values) 의 최소제곱 기울기"""
    horizons = np.asarray(list(horizons), dtype=float)
    values = np.asarray(list(values), dtype=float)
    if horizons.size < 2 or np.any(values <= 0):
        raise ParameterError("log_slope needs at least two horizons and positive values")
    slope, _ = np.polyfit(horizons, np.log(values), 1)
    return float(slope)


def ce_collapse_curve(mkt: MarketParams, p: float, p_star: float, interp: InterpolationSpec,
                      horizons: Iterable[float], x0: float = 1.0, nodes: Optional[int] = None,
                      workers: Optional[int] = None) -> List[CollapsePoint]:
    """
    두 조각 효용 아래 isoelastic 포트폴리오 CE / 최적 CE

    Raises:
        PreconditionError: 파라미터 제약이 성립하지 않을 때
    """
    restriction = check_param_restriction(mkt, p, p_star)
    if not restriction.satisfied:
        raise PreconditionError(
            f"Parameter restriction fails (lhs={restriction.lhs:.6g} <= rhs={restriction.rhs:.6g}); "
            f"the collapse is only established when the risky asset is attractive enough"
        )
    u = TwoPiecePower(p=p, p_star=p_star, interpolation=interp)
    exponent = divergence_exponent(mkt, p, p_star)
    workers = workers or config.experiments.workers

    def point(T: float) -> CollapsePoint:
        base = ce_ratio(u, mkt, p, T, x0, nodes)
        return CollapsePoint(
            **base.model_dump(),
            utility_ratio=isoelastic_utility_ratio(u, mkt, T, nodes),
            lowwealth_ratio=lowwealth_ratio_closed_form(mkt, p, p_star, T).lowwealth_ratio,
            exponent=exponent,
        )

    points = sweep_horizons(point, horizons, workers)
    logger.info(f"CE collapse curve computed for {len(points)} horizon(s)", extra={
        "p": p, "p_star": p_star, "x_hi": interp.x_hi, "ratios": [pt.ratio for pt in points]
    })
    return points
