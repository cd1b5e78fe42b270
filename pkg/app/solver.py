"""
완비시장 말기 부 최적화 (쌍대 일계조건), 기대효용/확실성등가 평가, 쌍대간극 진단.

모든 기댓값은 할인인자 Y_T 또는 부 X_T 의 로그정규 분포를 표준정규 Z로
표현해서 적분한다. I(y Y_T)가 꺾이거나 끊기는 점은 Z 공간의 분할점이 된다.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from app.config import config
from app.exceptions import (
    ContractViolationError,
    EvaluationError,
    ParameterError,
    BracketingError,
    RangeError,
    WellposednessError,
)
from app.logging_config import logger
from app.market import cp_wealth_law, deflator_law, merton_weight
from app.models import MarketParams, McConfig, TerminalLaw
from app.numerics import (
    QuadratureRule,
    expect_normal,
    find_root_monotone,
    gauss_hermite,
    mc_expect,
    piecewise_rule,
)
from app.schemas import CeRatioPoint, HolderReport, SolveResult
from app.utility import UtilityBase

_EPS = np.finfo(float).eps


def _default_nodes(nodes: Optional[int]) -> int:
    return int(nodes) if nodes is not None else config.numerics.nodes


def rule_for(breakpoints: Iterable[float], nodes: int) -> QuadratureRule:
    """분할점이 적분 구간 안에 있으면 합성 규칙, 아니면 Gauss-Hermite"""
    width = config.numerics.tail_width
    inside = [b for b in breakpoints if np.isfinite(b) and -width < b < width]
    if inside:
        return piecewise_rule(inside, n_panels=nodes, order=config.numerics.panel_order, width=width)
    return gauss_hermite(nodes)


def _law_expect(f: Callable, law: TerminalLaw, rule: Optional[QuadratureRule]) -> float:
    """E[f(exp(m + sZ))]"""
    if law.deterministic:
        point = np.atleast_1d(law.sample(0.0))
        value = float(np.asarray(f(point), dtype=float).ravel()[0])
        if not np.isfinite(value):
            raise EvaluationError(f"Integrand is not finite at the point mass {float(point[0])!r}")
        return value
    return expect_normal(lambda z: f(law.sample(z)), rule)


def _z_of_levels(law: TerminalLaw, levels: Iterable[float]) -> List[float]:
    if law.deterministic:
        return []
    return [float(law.z_of(level)) for level in levels if np.isfinite(level) and level > 0]


def _deflator_breakpoints(u: UtilityBase, dlaw: TerminalLaw, multiplier: float,
                          extra_levels: Iterable[float] = ()) -> List[float]:
    # y Y_T = κ  <=>  Y_T = κ / y
    levels = [k / multiplier for k in list(u.kinks) + list(extra_levels)]
    return _z_of_levels(dlaw, levels)


def isoelastic_multiplier(mkt: MarketParams, p: float, T: float, x0: float = 1.0) -> float:
    """x^p/p (p=0: log) 문제의 닫힌 형태 승수 x0^{p-1} E[Y_T^q]^{1-p}"""
    if p == 0:
        return 1.0 / x0
    q = p / (p - 1.0)
    return x0 ** (p - 1.0) * deflator_law(mkt, T).moment(q) ** (1.0 - p)


def equivalent_safe_rate(ce: float, x0: float, T: float) -> float:
    """CE = x0 e^{rate T} 이 되는 등가 무위험 수익률"""
    return math.log(ce / x0) / T


def isoelastic_closed_form(mkt: MarketParams, p: float, T: float, x0: float = 1.0) -> Tuple[SolveResult, float]:
    """
    isoelastic 효용의 Merton 해

    Returns:
        (SolveResult, weight): weight = mu/((1-p) sigma²)
    """
    weight = merton_weight(mkt, 1.0 - p)
    rate = mkt.r + mkt.mu ** 2 / (2.0 * (1.0 - p) * mkt.sigma ** 2)
    ce = x0 * math.exp(rate * T)
    expected_utility = math.log(ce) if p == 0 else ce ** p / p
    result = SolveResult(
        horizon=T,
        x0=x0,
        multiplier=isoelastic_multiplier(mkt, p, T, x0),
        expected_utility=expected_utility,
        certainty_equivalent=ce,
        duality_gap=0.0,
        quad_error=0.0,
        equivalent_safe_rate=rate,
        weight=weight,
    )
    return result, weight


def expected_utility_of_law(u: UtilityBase, law: TerminalLaw, rule: Optional[QuadratureRule] = None,
                            nodes: Optional[int] = None) -> float:
    """
    E[U(X_T)], X_T ~ law

    Args:
        u: 효용
        law: 말기 부의 로그정규 분포
        rule: 적분 규칙 (없으면 u의 꺾인 점으로 분할한 규칙을 만듦)

    Raises:
        WellposednessError: 피적분함수가 발산할 때
    """
    if rule is None and not law.deterministic:
        rule = rule_for(_z_of_levels(law, u.knots), _default_nodes(nodes))
    try:
        value = _law_expect(u.payoff_value, law, rule)
    except EvaluationError as exc:
        raise WellposednessError(f"Expected utility diverges under {type(u).__name__}: {exc.detail}") from exc
    if not np.isfinite(value):
        raise WellposednessError(f"Expected utility is not finite under {type(u).__name__}")
    return value


def certainty_equivalent(u: UtilityBase, expected_utility: float) -> float:
    """U^{-1}(E[U]). 치역 밖이면 RangeError"""
    return u.inverse_value(expected_utility)


def _optimal_payoff(u: UtilityBase, y):
    """I(y). 포락선 다리 기울기와 같은 y는 오른쪽 끝점 x_r 로 결정"""
    return u._inverse_marginal_bounds(y)[1]


class _BudgetProblem:
    """승수 y에 대한 예산식 E[Y I(yY)] = x0 과 해 평가"""

    def __init__(self, u: UtilityBase, mkt: MarketParams, T: float, x0: float, nodes: int):
        self.u = u
        self.dlaw = deflator_law(mkt, T)
        self.x0 = x0
        self.nodes = nodes

    def rule(self, multiplier: float, nodes: int) -> Optional[QuadratureRule]:
        if self.dlaw.deterministic:
            return None
        return rule_for(_deflator_breakpoints(self.u, self.dlaw, multiplier), nodes)

    def budget(self, log_y: float) -> float:
        y = math.exp(log_y)
        rule = self.rule(y, self.nodes)
        return _law_expect(lambda Y: Y * _optimal_payoff(self.u, y * Y), self.dlaw, rule) - self.x0

    def values(self, y: float, nodes: int) -> Tuple[float, float]:
        """(E[U(I(yY))], E[V(yY)])"""
        rule = self.rule(y, nodes)
        u = self.u
        try:
            eu = _law_expect(lambda Y: u.payoff_value(_optimal_payoff(u, y * Y)), self.dlaw, rule)
            dual = _law_expect(lambda Y: u._dual(y * Y), self.dlaw, rule)
        except EvaluationError as exc:
            raise WellposednessError(f"Primal or dual integral diverges: {exc.detail}") from exc
        return eu, dual


def _bracket_log_multiplier(problem: _BudgetProblem, log_y0: float) -> Tuple[float, float]:
    step = math.log(config.numerics.bracket_factor)
    lo, hi = log_y0 - step, log_y0 + step
    for _ in range(config.numerics.max_expansions):
        g_lo, g_hi = problem.budget(lo), problem.budget(hi)
        if g_lo >= 0.0 >= g_hi:
            return lo, hi
        if g_lo < 0.0:
            lo -= step
        if g_hi > 0.0:
            hi += step
    raise BracketingError(
        f"Budget equation has no root after {config.numerics.max_expansions} bracket expansions "
        f"around y0={math.exp(log_y0):.6g}"
    )


def solve_terminal(u: UtilityBase, mkt: MarketParams, T: float, x0: float = 1.0,
                   nodes: Optional[int] = None) -> SolveResult:
    """
    E[Y_T I(y Y_T)] = x0 을 만족하는 승수 y 를 찾고 최적 보상 I(y Y_T) 를 평가

    Args:
        u: 오목 효용 (Incentivized 는 concave_envelope 를 먼저 적용)
        mkt: 시장 파라미터
        T: 만기
        x0: 초기 자본

    Returns:
        SolveResult: 승수, 기대효용, CE, 쌍대간극, 적분오차

    Raises:
        ContractViolationError: u가 오목하지 않을 때
        BracketingError: 브래킷 확장 상한 안에 근이 없을 때
        WellposednessError: 기대효용 또는 쌍대 적분 발산
    """
    if not u.concave:
        raise ContractViolationError(f"solve_terminal requires a concave utility, got non-concave {type(u).__name__}")
    nodes = _default_nodes(nodes)
    problem = _BudgetProblem(u, mkt, T, x0, nodes)

    log_y0 = math.log(isoelastic_multiplier(mkt, u.reference_power, T, x0))
    lo, hi = _bracket_log_multiplier(problem, log_y0)
    log_y = find_root_monotone(problem.budget, lo, hi, tol=config.numerics.root_tol)
    y = math.exp(log_y)

    eu, dual = problem.values(y, nodes)
    eu_fine, dual_fine = problem.values(y, 2 * nodes)
    if not (np.isfinite(eu) and np.isfinite(dual)):
        raise WellposednessError(f"Non-finite value at multiplier y={y:.6g} (EU={eu}, dual={dual})")
    quad_error = max(abs(eu - eu_fine), abs(dual - dual_fine), 64.0 * _EPS * abs(eu))
    gap = dual + y * x0 - eu
    ce = certainty_equivalent(u, eu)

    if gap < -10.0 * quad_error:
        logger.warning(f"Weak duality violated beyond quadrature error: gap={gap:.3e}", extra={
            "horizon": T, "multiplier": y, "quad_error": quad_error
        })
    logger.debug(f"Solved terminal problem at T={T}", extra={
        "utility": type(u).__name__, "multiplier": y, "certainty_equivalent": ce,
        "duality_gap": gap, "quad_error": quad_error
    })
    return SolveResult(
        horizon=T,
        x0=x0,
        multiplier=y,
        expected_utility=eu,
        certainty_equivalent=ce,
        duality_gap=gap,
        quad_error=quad_error,
        equivalent_safe_rate=equivalent_safe_rate(ce, x0, T),
    )


def evaluate_payoff(u_eval: UtilityBase, u_payoff: UtilityBase, multiplier: float, mkt: MarketParams,
                    T: float, nodes: Optional[int] = None) -> Tuple[float, float]:
    """
    u_payoff 의 최적 보상 I(yY_T) 를 u_eval 로 평가한 기대효용과 적분오차
    """
    nodes = _default_nodes(nodes)
    dlaw = deflator_law(mkt, T)
    # u_eval 이 꺾이는 부 수준 x 는 y Y = u_payoff'(x) 에서 나타남
    eval_levels = [float(u_payoff._marginal(np.array([x]))[0]) for x in u_eval.knots if x > 0]

    def integrand(Y):
        return u_eval.payoff_value(_optimal_payoff(u_payoff, multiplier * Y))

    values = []
    for n in (nodes, 2 * nodes):
        rule = None if dlaw.deterministic else rule_for(
            _deflator_breakpoints(u_payoff, dlaw, multiplier, eval_levels), n)
        try:
            values.append(_law_expect(integrand, dlaw, rule))
        except EvaluationError as exc:
            raise WellposednessError(f"Expected utility of payoff diverges: {exc.detail}") from exc
    return values[0], max(abs(values[0] - values[1]), 64.0 * _EPS * abs(values[0]))


def _relative_ce_error(u: UtilityBase, eu: float, error: float) -> float:
    ce = u.inverse_value(eu)
    worst = 0.0
    for shifted in (eu - error, eu + error):
        try:
            worst = max(worst, abs(u.inverse_value(shifted) - ce) / ce)
        except RangeError:
            return math.inf
    return worst


def ce_ratio(u: UtilityBase, mkt: MarketParams, p_ref: float, T: float, x0: float = 1.0,
             nodes: Optional[int] = None, method: str = "quadrature",
             mc: Optional[McConfig] = None) -> CeRatioPoint:
    """
    p_ref 의 Merton 고정비율 전략 CE 와 u 의 최적 CE 의 비율

    Args:
        method: "quadrature" 또는 "montecarlo" (isoelastic 포트폴리오의 기대효용에만 적용)
    """
    nodes = _default_nodes(nodes)
    weight = merton_weight(mkt, 1.0 - p_ref)
    unit = cp_wealth_law(mkt, weight, T)
    law = TerminalLaw(log_mean=unit.log_mean + math.log(x0), log_std=unit.log_std, horizon=T)

    mc_stderr = None
    if method == "montecarlo":
        if mc is None:
            mc = McConfig(**config.montecarlo.model_dump())
        eu_iso, mc_stderr = mc_expect(u.payoff_value, law, mc)
        iso_error = mc_stderr
    else:
        breakpoints = _z_of_levels(law, u.knots)
        eu_iso = expected_utility_of_law(u, law, None if law.deterministic else rule_for(breakpoints, nodes))
        eu_iso_fine = expected_utility_of_law(u, law, None if law.deterministic else rule_for(breakpoints, 2 * nodes))
        iso_error = max(abs(eu_iso - eu_iso_fine), 64.0 * _EPS * abs(eu_iso))
    ce_iso = certainty_equivalent(u, eu_iso)

    optimal = solve_terminal(u, mkt, T, x0, nodes)
    ratio = ce_iso / optimal.certainty_equivalent
    quad_error = (_relative_ce_error(u, eu_iso, iso_error)
                  + _relative_ce_error(u, optimal.expected_utility, optimal.quad_error))
    if ratio > 1.0 + 10.0 * quad_error + 1e-12:
        logger.warning(f"CE ratio exceeds 1 beyond tolerance at T={T}: {ratio:.12g}", extra={
            "horizon": T, "ratio": ratio, "quad_error": quad_error
        })

    return CeRatioPoint(
        horizon=T,
        ce_optimal=optimal.certainty_equivalent,
        ce_isoelastic=ce_iso,
        ratio=ratio,
        quad_error=quad_error,
        rate_optimal=optimal.equivalent_safe_rate,
        rate_isoelastic=equivalent_safe_rate(ce_iso, x0, T),
        multiplier_ratio=optimal.multiplier / isoelastic_multiplier(mkt, p_ref, T, x0),
        mc_stderr=mc_stderr,
    )


def duality_gap_scan(u: UtilityBase, mkt: MarketParams, T: float, ys: Iterable[float],
                     x0: float = 1.0, nodes: Optional[int] = None) -> List[float]:
    """각 y에 대해 E[V(yY_T)] + y x0 - E[U(X*_T)]"""
    nodes = _default_nodes(nodes)
    optimal = solve_terminal(u, mkt, T, x0, nodes)
    problem = _BudgetProblem(u, mkt, T, x0, nodes)
    gaps = []
    for y in ys:
        _, dual = problem.values(float(y), nodes)
        gaps.append(dual + float(y) * x0 - optimal.expected_utility)
    return gaps


def buy_and_hold_ce_ratio(mkt: MarketParams, T: float) -> Tuple[float, float, float]:
    """
    위험중립 (U(x)=x) 투자자의 전액 주식 대 주식/채권 반반 (재조정 없음) CE 비율.
    두 전략의 등가 무위험 수익률은 같은 극한 mu + r 로 가지만 CE 비율은 2로 간다.

    Returns:
        (ratio, rate_stock, rate_mixed)
    """
    stock = math.exp((mkt.mu + mkt.r) * T)
    mixed = 0.5 * math.exp(mkt.r * T) + 0.5 * stock
    return stock / mixed, math.log(stock) / T, math.log(mixed) / T


def holder_duality_check(n_trials: int, seed: int, n_atoms: int = 8) -> HolderReport:
    """
    E[XY] <= 1 이면 (1/p)E[X^p] <= (1/p)E[Y^q]^{1-p} 임을 무작위 이산분포로 확인하고,
    X = Y^{1/(p-1)}/E[Y^q] 에서 등호가 성립함을 확인
    """
    if n_trials < 1:
        raise ParameterError(f"n_trials must be >= 1, got {n_trials}")
    generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    violations = 0
    max_violation = 0.0
    equality_error = 0.0
    for _ in range(n_trials):
        p = 0.0
        while abs(p) < 1e-3:
            p = float(generator.uniform(-5.0, 0.9))
        q = p / (p - 1.0)
        probs = generator.dirichlet(np.ones(n_atoms))
        X = np.exp(generator.standard_normal(n_atoms))
        Y = np.exp(generator.standard_normal(n_atoms))
        X = X * generator.uniform(0.5, 1.0) / float(np.dot(probs, X * Y))

        bound = float(np.dot(probs, Y ** q)) ** (1.0 - p) / p
        lhs = float(np.dot(probs, X ** p)) / p
        excess = (lhs - bound) / abs(bound)
        if excess > 1e-12:
            violations += 1
        max_violation = max(max_violation, excess)

        X_eq = Y ** (1.0 / (p - 1.0)) / float(np.dot(probs, Y ** q))
        lhs_eq = float(np.dot(probs, X_eq ** p)) / p
        equality_error = max(equality_error, abs(lhs_eq - bound) / abs(bound))

    passed = violations == 0 and equality_error <= 1e-10
    logger.info(f"Holder duality check: {violations} violation(s) in {n_trials} trials", extra={
        "seed": seed, "max_violation": max_violation, "equality_max_error": equality_error
    })
    return HolderReport(
        n_trials=n_trials,
        seed=seed,
        violations=violations,
        max_violation=max_violation,
        equality_max_error=equality_error,
        passed=passed,
    )


def sweep_horizons(fn: Callable[[float], object], horizons: Iterable[float], workers: int = 1) -> list:
    """만기별 독립 계산을 병렬로 수행하고 입력 순서대로 결과를 모음"""
    horizons = list(horizons)
    if workers > 1 and len(horizons) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, horizons))
    return [fn(T) for T in horizons]
