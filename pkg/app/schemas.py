from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import List, Literal, Optional

from app.models import MarketParams, McConfig


class SolveResult(BaseModel):
    """완비시장 최적 말기 부 문제의 해"""
    horizon: float = Field(..., description="만기 T")
    x0: float = Field(1.0, description="초기 자본")
    multiplier: float = Field(..., gt=0, description="예산제약 라그랑주 승수 y")
    expected_utility: float = Field(..., description="E[U(X_T)]")
    certainty_equivalent: float = Field(..., gt=0, description="U^{-1}(E[U(X_T)])")
    duality_gap: float = Field(..., description="E[V(yY_T)] + y x0 - E[U(X_T)]")
    quad_error: float = Field(..., ge=0, description="노드 수 두 배 비교 오차 추정")
    equivalent_safe_rate: float = Field(..., description="log(CE/x0)/T")
    weight: Optional[float] = Field(None, description="고정 위험자산 비중 (닫힌 형태 해일 때)")


class CeRatioPoint(BaseModel):
    """isoelastic 포트폴리오 CE / 최적 CE"""
    horizon: float
    ce_optimal: float
    ce_isoelastic: float
    ratio: float
    quad_error: float = Field(0.0, ge=0, description="ratio의 상대 적분오차")
    rate_optimal: float = Field(..., description="최적 해의 등가 무위험 수익률")
    rate_isoelastic: float = Field(..., description="isoelastic 포트폴리오의 등가 무위험 수익률")
    multiplier_ratio: float = Field(..., description="최적 승수 / isoelastic 승수")
    mc_stderr: Optional[float] = Field(None, description="Monte Carlo 평가 시 E[U] 표준오차")


class CollapsePoint(CeRatioPoint):
    """반례 효용에서의 CE 비율과 저자산 기여도"""
    utility_ratio: float = Field(..., description="E[U(X̃_T)] / E[Ũ(X̃_T)]")
    lowwealth_ratio: float = Field(..., description="E[X̃^{p*} 1{X̃<=1}] / E[X̃^p]")
    exponent: float


class GrantCurvePoint(BaseModel):
    """옵션 부여의 사적 가치 (CE 프리미엄)"""
    horizon: float
    ce_plain: float = Field(..., description="옵션 없는 최적 보상을 포락선 효용으로 평가한 CE")
    ce_incentivized: float = Field(..., description="포락선 효용의 최적 CE")
    premium: float = Field(..., description="ce_incentivized / ce_plain - 1")
    ce_private_plain: float = Field(..., description="옵션 없는 문제 자체의 최적 CE")
    quad_error: float = Field(0.0, ge=0)


class GammaStarPoint(BaseModel):
    """거듭제곱 인센티브 x^alpha 의 유효 위험회피도 검증"""
    horizon: float
    alpha: float
    gamma: float
    gamma_star: float
    weight: float = Field(..., description="merton_weight(gamma*)")
    ce_incentivized: float
    ce_closed_form: float
    rel_error: float


class AssumptionReport(BaseModel):
    """고자산 한계효용 수렴 / 저자산 조건 진단"""
    p_ref: float
    high_wealth_points: List[float]
    marginal_ratios: List[float] = Field(..., description="U'(x) / x^{p_ref-1}")
    marginal_converged: bool
    low_wealth_points: List[float]
    lowwealth_ratios: List[float] = Field(..., description="p_ref<=0: U(x)/x^{p_ref-1}, p_ref>0: U(x)")
    lowwealth_bounded: bool
    vanishes_at_infinity: Optional[bool] = Field(None, description="p_ref<0 에서 U(∞)=0 여부")
    lowwealth_ok: bool
    concave: bool
    analytic_lowwealth_verdict: Optional[bool] = Field(None, description="두 조각 효용: p* >= p-1")


class HolderReport(BaseModel):
    n_trials: int
    seed: int
    violations: int
    max_violation: float
    equality_max_error: float
    passed: bool


class RestrictionReport(BaseModel):
    """반례 파라미터 제약 (위험자산이 충분히 매력적인지)"""
    lhs: float
    rhs: float
    satisfied: bool
    margin: float


class DivergenceReport(BaseModel):
    horizon: float
    exponent: float
    qstar_prob: float = Field(..., ge=0, le=1)
    lowwealth_ratio: float


class ReplicationRow(BaseModel):
    x: float
    value: float
    target: float
    rel_error: float


COMMANDS = ("robustness", "counterexample", "incentives", "replicate", "validate", "price-square")


class ReplicationSettings(BaseModel):
    alpha: float = Field(2.0, gt=0)
    kbar: float = Field(0.0, ge=0)
    n_strikes: int = Field(10000, ge=2)
    k_min: float = Field(1e-4, gt=0)
    k_max: float = Field(80.0, gt=0)
    x_min: float = Field(0.5, gt=0)
    x_max: float = Field(20.0, gt=0)
    n_points: int = Field(41, ge=1, description="출력 표의 평가 지점 수 (로그 간격)")
    spacing: Literal["geometric", "uniform"] = "geometric"


class ExperimentConfig(BaseModel):
    """한 번의 실험 실행에 필요한 전체 설정 (출력 메타데이터에 그대로 기록)"""
    model_config = ConfigDict(extra="forbid")

    command: Literal["robustness", "counterexample", "incentives", "replicate", "validate", "price-square"]
    market: MarketParams
    utility: Optional[str] = Field(None, description="효용 서술자")
    p_ref: Optional[float] = Field(None, description="기준 isoelastic p (없으면 효용의 기준 거듭제곱)")
    p: Optional[float] = None
    p_star: Optional[float] = None
    x_hi: float = Field(8.0, gt=1)
    interp: Literal["exp_marginal", "cubic_hermite"] = "exp_marginal"
    horizons: List[float] = Field(default_factory=list)
    method: Literal["quadrature", "montecarlo"] = "quadrature"
    nodes: int = Field(201, ge=21)
    mc: McConfig
    x0: float = Field(1.0, gt=0)
    workers: int = Field(1, ge=1)
    replicate: ReplicationSettings = Field(default_factory=ReplicationSettings)
    s0: float = Field(10.0, gt=0)
    out: Optional[str] = None
    format: Literal["csv", "json"] = "csv"

    @field_validator("horizons")
    @classmethod
    def _horizons_increasing(cls, horizons: List[float]) -> List[float]:
        if any(t < 0 for t in horizons):
            raise ValueError("horizons must be non-negative")
        if any(b <= a for a, b in zip(horizons, horizons[1:])):
            raise ValueError("horizons must be strictly increasing")
        return horizons
