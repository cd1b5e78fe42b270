import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Tuple


class MarketParams(BaseModel):
    """단일 위험자산 Black-Scholes 시장 (dS/S = (mu + r)dt + sigma dW)"""
    model_config = ConfigDict(frozen=True)

    mu: float = Field(..., description="위험자산 초과수익률 (연율)")
    sigma: float = Field(..., gt=0, description="변동성 (연율)")
    r: float = Field(..., gt=0, description="무위험 이자율 (연율)")

    @property
    def theta(self) -> float:
        """위험의 시장가격 mu/sigma"""
        return self.mu / self.sigma


class TerminalLaw(BaseModel):
    """exp(log_mean + log_std * Z) 형태의 로그정규 분포, Z ~ N(0, 1)"""
    model_config = ConfigDict(frozen=True)

    log_mean: float = Field(..., description="로그 평균")
    log_std: float = Field(..., ge=0, description="로그 표준편차 (0이면 결정적)")
    horizon: float = Field(..., gt=0, description="만기 (년)")

    @property
    def deterministic(self) -> bool:
        return self.log_std == 0.0

    def sample(self, z):
        """표준정규 값 z를 분포의 값으로 변환"""
        return np.exp(self.log_mean + self.log_std * np.asarray(z, dtype=float))

    def log_value(self, z):
        return self.log_mean + self.log_std * np.asarray(z, dtype=float)

    def z_of(self, level: float) -> float:
        """sample(z) = level 이 되는 z (log_std > 0 일 때만)"""
        return (np.log(level) - self.log_mean) / self.log_std

    def moment(self, k: float) -> float:
        return float(np.exp(k * self.log_mean + 0.5 * (k * self.log_std) ** 2))

    @property
    def mean(self) -> float:
        return self.moment(1.0)


class McConfig(BaseModel):
    """Monte Carlo 설정. (seed, n_paths, chunk_size)가 같으면 결과 비트가 동일"""
    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(..., ge=1)
    seed: int = Field(..., ge=0, lt=2 ** 64)
    chunk_size: int = Field(..., ge=1)
    workers: int = Field(1, ge=1, description="병렬 청크 처리 스레드 수 (결과에 영향 없음)")


class OptionLeg(BaseModel):
    model_config = ConfigDict(frozen=True)

    quantity: float = Field(..., ge=0, description="옵션 수량 c3")
    strike: float = Field(..., gt=0, description="행사가 K")


class Contract(BaseModel):
    """보상 계약: 현금 c1 + 주식 비율 c2 + 옵션 레그들"""
    model_config = ConfigDict(frozen=True)

    c1: float = Field(0.0, ge=0, description="현금")
    c2: float = Field(..., gt=0, description="주식 비율")
    legs: Tuple[OptionLeg, ...] = Field(default_factory=tuple)

    @model_validator(mode="after")
    def _strikes_increasing(self):
        strikes = [leg.strike for leg in self.legs]
        if any(b <= a for a, b in zip(strikes, strikes[1:])):
            raise ValueError("option strikes must be strictly increasing")
        return self

    @property
    def strikes(self) -> List[float]:
        return [leg.strike for leg in self.legs]

    @property
    def total_slope(self) -> float:
        """가장 큰 행사가 위에서의 기울기 c2 + sum(c3)"""
        return self.c2 + sum(leg.quantity for leg in self.legs)

    @property
    def has_options(self) -> bool:
        return any(leg.quantity > 0 for leg in self.legs)

    def without_options(self) -> "Contract":
        return Contract(c1=self.c1, c2=self.c2, legs=())

    def payoff(self, x):
        """c1 + c2 x + sum c3_i (x - K_i)^+"""
        x = np.asarray(x, dtype=float)
        out = self.c1 + self.c2 * x
        for leg in self.legs:
            out = out + leg.quantity * np.maximum(x - leg.strike, 0.0)
        return out


class InterpolationSpec(BaseModel):
    """두 거듭제곱 조각 사이 [1, x_hi] 구간의 연결 방식"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["exp_marginal", "cubic_hermite"] = "exp_marginal"
    x_hi: float = Field(8.0, gt=1)

    @property
    def knots(self) -> Tuple[float, float]:
        return (1.0, self.x_hi)


class Bridge(BaseModel):
    """오목 포락선의 아핀 구간 [x_left, x_right] 위 slope·x + intercept"""
    model_config = ConfigDict(frozen=True)

    x_left: float = Field(..., ge=0)
    x_right: float = Field(..., gt=0)
    slope: float = Field(..., gt=0)
    intercept: float

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.x_left) & (x < self.x_right)

    def line(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)
