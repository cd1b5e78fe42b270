"""
효용함수 계열과 그 쌍대/역한계효용, 계약이 유도하는 유효효용, 오목 포락선.

모든 메서드는 numpy 배열을 받아 배열을 돌려주며 스칼라 입력에는 float을 돌려준다.
"""
import math
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator
from scipy import optimize
from scipy.interpolate import CubicHermiteSpline

from app.exceptions import (
    ContractViolationError,
    ConvergenceError,
    DomainError,
    NonDifferentiableError,
    ParameterError,
    RangeError,
    SetValuedError,
)
from app.logging_config import logger
from app.models import Bridge, Contract, InterpolationSpec
from app.numerics import find_root_monotone
from app.schemas import AssumptionReport

HIGH_WEALTH_POINTS = (1e2, 1e4, 1e6, 1e8)
LOW_WEALTH_POINTS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
TANGENCY_RESIDUAL_TOL = 1e-12


def _as_array(x) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _finish(values, scalar: bool):
    values = np.asarray(values, dtype=float)
    return float(values) if scalar else values


def _power_utility(w, p: float):
    """w^p/p (p=0 이면 log w)"""
    with np.errstate(divide="ignore"):
        if p == 0.0:
            return np.log(w)
        return np.power(w, p) / p


class UtilityBase(BaseModel):
    """공통 인터페이스. 하위 클래스는 _value/_marginal/_inverse_marginal (구간값이면 _inverse_marginal_bounds) 을 구현"""
    model_config = ConfigDict(frozen=True)

    # --- 하위 클래스 구현부 ---

    def _value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _marginal(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _inverse_marginal(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _inverse_marginal_bounds(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(최소 해, 최대 해). 포락선 다리 기울기에서만 둘이 다름"""
        x = self._inverse_marginal(y)
        return x, x

    def _dual(self, y: np.ndarray) -> np.ndarray:
        x = self._inverse_marginal_bounds(y)[0]
        return self.payoff_value(x) - y * x

    def _check_differentiable(self, x: np.ndarray) -> None:
        return None

    @property
    def reference_power(self) -> float:
        raise NotImplementedError

    @property
    def concave(self) -> bool:
        return True

    @property
    def kinks(self) -> List[float]:
        """역한계효용 I(y)가 매끄럽지 않거나 불연속인 y 값들"""
        return []

    @property
    def knots(self) -> List[float]:
        """U가 매끄럽지 않은 x 값들"""
        return []

    @property
    def corner_slope(self) -> float:
        """U'(0+). 이보다 큰 y 에서 최적 부는 0"""
        return math.inf

    @property
    def value_at_zero(self) -> float:
        return float(self.payoff_value(0.0))

    @property
    def value_at_infinity(self) -> float:
        return math.inf if self.reference_power >= 0 else 0.0

    def value_range(self) -> Tuple[float, float]:
        return self.value_at_zero, self.value_at_infinity

    # --- 공개 연산 ---

    def value(self, x):
        """U(x), x > 0"""
        arr, scalar = _as_array(x)
        if np.any(~(arr > 0)):
            raise DomainError(f"Utility is defined for x > 0 only, got {x!r}")
        return _finish(self._value(arr), scalar)

    def payoff_value(self, x):
        """x >= 0 인 최적 보상 값 평가 (코너해 x=0 허용)"""
        arr, scalar = _as_array(x)
        with np.errstate(divide="ignore"):
            return _finish(self._value(arr), scalar)

    def marginal(self, x):
        """U'(x). 꺾인 점에서는 NonDifferentiableError"""
        arr, scalar = _as_array(x)
        if np.any(~(arr > 0)):
            raise DomainError(f"Marginal utility is defined for x > 0 only, got {x!r}")
        self._check_differentiable(arr)
        return _finish(self._marginal(arr), scalar)

    def _require_concave(self, operation: str) -> None:
        if not self.concave:
            raise ContractViolationError(
                f"{operation} requires a concave utility; concavify {type(self).__name__} first"
            )

    def _inverse_marginal_checked(self, y, operation: str):
        self._require_concave(operation)
        arr, scalar = _as_array(y)
        if np.any(~(arr > 0)):
            raise DomainError(f"Inverse marginal is defined for y > 0 only, got {y!r}")
        lower, upper = self._inverse_marginal_bounds(arr)
        return lower, upper, scalar

    def inverse_marginal(self, y):
        """
        I(y) = (U')^{-1}(y)

        Raises:
            SetValuedError: y가 포락선 다리의 기울기와 같을 때 (구간은 inverse_marginal_interval)
        """
        lower, upper, scalar = self._inverse_marginal_checked(y, "inverse_marginal")
        tied = np.flatnonzero(np.ravel(lower != upper))
        if tied.size:
            lo, hi = float(np.ravel(lower)[tied[0]]), float(np.ravel(upper)[tied[0]])
            raise SetValuedError(
                f"Inverse marginal is set-valued on the bridge slope: every x in [{lo}, {hi}] attains it",
                lower=lo,
                upper=hi,
            )
        return _finish(upper, scalar)

    def inverse_marginal_interval(self, y):
        """(최소 해, 최대 해). 다리 기울기가 아니면 한 점 구간"""
        lower, upper, scalar = self._inverse_marginal_checked(y, "inverse_marginal_interval")
        return _finish(lower, scalar), _finish(upper, scalar)

    def dual(self, y):
        """V(y) = sup_x (U(x) - xy)"""
        self._require_concave("dual")
        arr, scalar = _as_array(y)
        if np.any(~(arr > 0)):
            raise DomainError(f"Dual function is defined for y > 0 only, got {y!r}")
        return _finish(self._dual(arr), scalar)

    def inverse_value(self, v: float) -> float:
        """
        U^{-1}(v)

        Raises:
            RangeError: v가 U의 치역 (U(0+), U(∞)) 밖일 때
        """
        lo, hi = self.value_range()
        if not (np.isfinite(v) and lo < v < hi):
            raise RangeError(f"Value {v!r} is outside the range ({lo}, {hi}) of {type(self).__name__}")
        return float(self._inverse_value(float(v)))

    def _inverse_value(self, v: float) -> float:
        raise NotImplementedError


class Isoelastic(UtilityBase):
    """Ũ(x) = x^p/p, p < 1, p != 0"""
    kind: Literal["isoelastic"] = "isoelastic"
    p: float = Field(..., lt=1)

    @field_validator("p")
    @classmethod
    def _nonzero(cls, p: float) -> float:
        if p == 0:
            raise ValueError("p=0 is the logarithmic utility; use Logarithmic")
        return p

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def reference_power(self) -> float:
        return self.p

    def _value(self, x):
        return _power_utility(x, self.p)

    def _marginal(self, x):
        return np.power(x, self.p - 1.0)

    def _inverse_marginal(self, y):
        return np.power(y, 1.0 / (self.p - 1.0))

    def _dual(self, y):
        return -np.power(y, self.q) / self.q

    def _inverse_value(self, v: float) -> float:
        return (self.p * v) ** (1.0 / self.p)


class Logarithmic(UtilityBase):
    """Ũ(x) = log x"""
    kind: Literal["log"] = "log"

    @property
    def reference_power(self) -> float:
        return 0.0

    def _value(self, x):
        with np.errstate(divide="ignore"):
            return np.log(x)

    def _marginal(self, x):
        return 1.0 / x

    def _inverse_marginal(self, y):
        return 1.0 / y

    def _dual(self, y):
        return -np.log(y) - 1.0

    def value_range(self) -> Tuple[float, float]:
        return -math.inf, math.inf

    def _inverse_value(self, v: float) -> float:
        return math.exp(v)


class ShiftedPower(UtilityBase):
    """U(x) = (x + a)^p/p (p=0 이면 log(x + a))"""
    kind: Literal["shifted"] = "shifted"
    p: float = Field(..., lt=1)
    a: float = Field(..., ge=0)

    @property
    def reference_power(self) -> float:
        return self.p

    @property
    def corner_slope(self) -> float:
        return self.a ** (self.p - 1.0) if self.a > 0 else math.inf

    @property
    def kinks(self) -> List[float]:
        return [self.corner_slope] if self.a > 0 else []

    def _value(self, x):
        return _power_utility(x + self.a, self.p)

    def _marginal(self, x):
        return np.power(x + self.a, self.p - 1.0)

    def _inverse_marginal(self, y):
        return np.maximum(np.power(y, 1.0 / (self.p - 1.0)) - self.a, 0.0)

    def _dual(self, y):
        if self.p == 0.0:
            interior = -np.log(y) - 1.0 + self.a * y
        else:
            q = self.p / (self.p - 1.0)
            interior = -np.power(y, q) / q + self.a * y
        return np.where(y < self.corner_slope, interior, self.value_at_zero)

    def _inverse_value(self, v: float) -> float:
        if self.p == 0.0:
            return math.exp(v) - self.a
        return (self.p * v) ** (1.0 / self.p) - self.a


def minimum_bridge_knot(p: float, p_star: float) -> float:
    """
    x^{p*}/p* (x<=1) 과 x^p/p (x>=x_hi) 를 오목한 C¹ 곡선으로 이을 수 있는 x_hi 하한.
    U(x_hi) - U(1) > U'(x_hi)(x_hi - 1) 의 경계점
    """
    def gap(x: float) -> float:
        return x ** p / p - 1.0 / p_star - x ** (p - 1.0) * (x - 1.0)

    hi = 2.0
    while gap(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e300:
            raise ParameterError(f"No concave bridge exists for p={p}, p_star={p_star}")
    return find_root_monotone(gap, 1.0, hi, tol=1e-12)


def _mean_weight(lam: float) -> float:
    """∫_0^1 w(t) dt = 1/λ - 1/(e^λ - 1)"""
    if abs(lam) < 1e-4:
        return 0.5 - lam / 12.0 + lam ** 3 / 720.0
    return 1.0 / lam - 1.0 / math.expm1(lam)


class TwoPiecePower(UtilityBase):
    """
    반례 효용: x <= 1 에서 x^{p*}/p*, x >= x_hi 에서 x^p/p, 그 사이는 오목한 C¹ 연결.

    exp_marginal 연결은 U'(x) = m1 + (m0 - m1) w(t), t = (x-1)/(x_hi-1),
    w(t) = (e^{-λt} - e^{-λ})/(1 - e^{-λ}) 로 두고 λ 를 적분 조건으로 정한다.
    cubic_hermite 연결은 오목성을 검사해서 실패하면 거부한다.
    """
    kind: Literal["twopiece"] = "twopiece"
    p: float = Field(..., lt=0)
    p_star: float
    interpolation: InterpolationSpec = Field(default_factory=InterpolationSpec)

    _u1: float = PrivateAttr()
    _uh: float = PrivateAttr()
    _m0: float = PrivateAttr()
    _m1: float = PrivateAttr()
    _lam: float = PrivateAttr(default=0.0)
    _spline: Optional[CubicHermiteSpline] = PrivateAttr(default=None)

    def model_post_init(self, __context) -> None:
        p, ps = self.p, self.p_star
        if not ps < p:
            raise ParameterError(f"p_star must be below p for the two-piece utility, got p={p}, p_star={ps}")
        x_hi = self.interpolation.x_hi
        self._u1 = 1.0 / ps
        self._uh = x_hi ** p / p
        self._m0 = 1.0
        self._m1 = x_hi ** (p - 1.0)
        length = x_hi - 1.0
        delta = self._uh - self._u1
        if not (self._m1 * length < delta < self._m0 * length):
            bound = minimum_bridge_knot(p, ps)
            raise ParameterError(
                f"No concave C1 bridge on [1, {x_hi}] for p={p}, p_star={ps}; x_hi must exceed {bound:.6g}"
            )

        if self.interpolation.kind == "exp_marginal":
            rho = (delta - self._m1 * length) / ((self._m0 - self._m1) * length)
            self._lam = find_root_monotone(lambda lam: _mean_weight(lam) - rho, -500.0, 500.0, tol=1e-14)
        else:
            spline = CubicHermiteSpline([1.0, x_hi], [self._u1, self._uh], [self._m0, self._m1])
            curvature = spline.derivative(2)(np.array([1.0, x_hi]))
            if np.any(curvature > 0.0):
                raise ParameterError(
                    f"Cubic Hermite bridge on [1, {x_hi}] is not concave "
                    f"(U'' at knots = {curvature[0]:.4g}, {curvature[1]:.4g}); use kind=exp_marginal"
                )
            self._spline = spline
        logger.debug("Two-piece utility bridge built", extra={
            "p": p, "p_star": ps, "x_hi": x_hi, "kind": self.interpolation.kind, "lambda": self._lam
        })

    @property
    def x_hi(self) -> float:
        return self.interpolation.x_hi

    @property
    def reference_power(self) -> float:
        return self.p

    @property
    def kinks(self) -> List[float]:
        return [self._m1, self._m0]

    @property
    def knots(self) -> List[float]:
        return [1.0, self.x_hi]

    @property
    def lowwealth_verdict(self) -> bool:
        """저자산 조건은 p* >= p - 1 과 동치"""
        return self.p_star >= self.p - 1.0

    # --- [1, x_hi] 연결 구간 ---

    def _t(self, x):
        return (x - 1.0) / (self.x_hi - 1.0)

    def _w(self, t):
        lam = self._lam
        if lam == 0.0:
            return 1.0 - t
        return np.exp(-lam * t) * np.expm1(-lam * (1.0 - t)) / math.expm1(-lam)

    def _w_integral(self, t):
        lam = self._lam
        if lam == 0.0:
            return t - 0.5 * t * t
        return (-np.expm1(-lam * t) / lam - t * math.exp(-lam)) / (-math.expm1(-lam))

    def _bridge_value(self, x):
        if self._spline is not None:
            return self._spline(x)
        length = self.x_hi - 1.0
        return self._u1 + self._m1 * (x - 1.0) + (self._m0 - self._m1) * length * self._w_integral(self._t(x))

    def _bridge_marginal(self, x):
        if self._spline is not None:
            return self._spline.derivative()(x)
        return self._m1 + (self._m0 - self._m1) * self._w(self._t(x))

    def _bridge_inverse(self, y):
        if self._spline is not None:
            derivative = self._spline.derivative()
            return np.array([
                find_root_monotone(lambda s: float(derivative(s)) - yi, 1.0, self.x_hi, tol=1e-14)
                for yi in np.atleast_1d(y)
            ])
        w = (y - self._m1) / (self._m0 - self._m1)
        lam = self._lam
        if lam == 0.0:
            t = 1.0 - w
        else:
            t = -np.log(w * (-math.expm1(-lam)) + math.exp(-lam)) / lam
        return 1.0 + (self.x_hi - 1.0) * np.clip(t, 0.0, 1.0)

    # --- 조각별 평가 ---

    def _value(self, x):
        out = np.empty_like(x)
        low, high = x <= 1.0, x >= self.x_hi
        mid = ~(low | high)
        with np.errstate(divide="ignore"):
            out[low] = np.power(x[low], self.p_star) / self.p_star
        out[high] = np.power(x[high], self.p) / self.p
        out[mid] = self._bridge_value(x[mid])
        return out

    def _marginal(self, x):
        out = np.empty_like(x)
        low, high = x <= 1.0, x >= self.x_hi
        mid = ~(low | high)
        out[low] = np.power(x[low], self.p_star - 1.0)
        out[high] = np.power(x[high], self.p - 1.0)
        out[mid] = self._bridge_marginal(x[mid])
        return out

    def _inverse_marginal(self, y):
        out = np.empty_like(y)
        low, high = y >= self._m0, y <= self._m1
        mid = ~(low | high)
        out[low] = np.power(y[low], 1.0 / (self.p_star - 1.0))
        out[high] = np.power(y[high], 1.0 / (self.p - 1.0))
        if mid.any():
            out[mid] = self._bridge_inverse(y[mid])
        return out

    def value_range(self) -> Tuple[float, float]:
        return -math.inf, 0.0

    def _inverse_value(self, v: float) -> float:
        if v <= self._u1:
            return (self.p_star * v) ** (1.0 / self.p_star)
        if v >= self._uh:
            return (self.p * v) ** (1.0 / self.p)
        return find_root_monotone(
            lambda x: float(self._bridge_value(np.asarray(x))) - v, 1.0, self.x_hi, tol=1e-15
        )


class Incentivized(UtilityBase):
    """
    옵션 부여 계약이 유도하는 관리자의 유효효용
    ū(x) = Ũ(c1 + c2 x + Σ c3_i (x - K_i)^+) / (c2 + Σ c3_i)^p
    """
    kind: Literal["incentive"] = "incentive"
    p: float = Field(..., lt=1)
    contract: Contract

    _A: np.ndarray = PrivateAttr()
    _B: np.ndarray = PrivateAttr()
    _lo: np.ndarray = PrivateAttr()
    _hi: np.ndarray = PrivateAttr()
    _norm: float = PrivateAttr()

    @field_validator("p")
    @classmethod
    def _nonzero(cls, p: float) -> float:
        if p == 0:
            raise ValueError("incentivized utility requires p != 0")
        return p

    def model_post_init(self, __context) -> None:
        quantities = np.array([leg.quantity for leg in self.contract.legs], dtype=float)
        strikes = np.array(self.contract.strikes, dtype=float)
        # 구간 j: 지불액 = A_j + B_j x
        self._A = self.contract.c1 - np.concatenate([[0.0], np.cumsum(quantities * strikes)])
        self._B = self.contract.c2 + np.concatenate([[0.0], np.cumsum(quantities)])
        self._lo = np.concatenate([[0.0], strikes])
        self._hi = np.concatenate([strikes, [np.inf]])
        self._norm = self.contract.total_slope ** self.p

    @property
    def reference_power(self) -> float:
        return self.p

    @property
    def concave(self) -> bool:
        return not self.contract.has_options

    @property
    def corner_slope(self) -> float:
        c1 = self.contract.c1
        if c1 <= 0:
            return math.inf
        return float(self._B[0] * c1 ** (self.p - 1.0) / self._norm)

    @property
    def kinks(self) -> List[float]:
        slope = self.corner_slope
        return [slope] if math.isfinite(slope) else []

    @property
    def knots(self) -> List[float]:
        return [leg.strike for leg in self.contract.legs if leg.quantity > 0]

    def _segment(self, x):
        return np.searchsorted(self._hi[:-1], x, side="right")

    def _value(self, x):
        j = self._segment(x)
        return _power_utility(self._A[j] + self._B[j] * x, self.p) / self._norm

    def _marginal(self, x):
        # 행사가에서는 오른쪽 미분
        j = self._segment(x)
        return self._B[j] * np.power(self._A[j] + self._B[j] * x, self.p - 1.0) / self._norm

    def _check_differentiable(self, x):
        for leg in self.contract.legs:
            if leg.quantity > 0 and np.any(x == leg.strike):
                k = np.array([leg.strike])
                j = int(self._segment(k)[0])
                payoff = float(self._A[j] + self._B[j] * leg.strike)
                scale = payoff ** (self.p - 1.0) / self._norm
                raise NonDifferentiableError(
                    f"Effective utility has a kink at strike K={leg.strike}",
                    left_slope=float(self._B[j - 1] * scale),
                    right_slope=float(self._B[j] * scale),
                )

    def segment_inverse(self, y, lo: float = 0.0, hi: float = math.inf):
        """[lo, hi] 안에서 ū'(x) = y 인 x (그 구간에서 ū가 오목하다는 전제)"""
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape, np.nan)
        for j in range(self._A.size):
            left, right = max(self._lo[j], lo), min(self._hi[j], hi)
            if left >= right:
                continue
            with np.errstate(divide="ignore", over="ignore"):
                x = (np.power(y * self._norm / self._B[j], 1.0 / (self.p - 1.0)) - self._A[j]) / self._B[j]
            take = np.isnan(out) & (x >= left) & (x <= right)
            out[take] = x[take]
        missing = np.isnan(out)
        if missing.any():
            # 반올림으로 구간 밖에 떨어진 점은 가까운 끝점으로
            slope_lo = float(self._marginal(np.array([lo]))[0]) if lo > 0 else self.corner_slope
            out[missing] = np.where(y[missing] >= slope_lo, lo, hi)
        return out

    def _inverse_marginal(self, y):
        return np.maximum(self.segment_inverse(y), 0.0)

    def _inverse_value(self, v: float) -> float:
        with np.errstate(invalid="ignore"):
            level = (self.p * v * self._norm) ** (1.0 / self.p)
        # 지불액은 x에 대해 증가하는 조각별 선형
        payoff_at_strikes = self._A[1:] + self._B[1:] * self._lo[1:]
        j = int(np.searchsorted(payoff_at_strikes, level, side="right"))
        return (level - self._A[j]) / self._B[j]


class ConcaveEnvelope(UtilityBase):
    """
    ū 를 지배하는 최소 오목함수. bridges 구간에서는 아핀, 밖에서는 ū 와 같다.
    """
    kind: Literal["envelope"] = "envelope"
    base: "UtilitySpec"
    bridges: Tuple[Bridge, ...] = ()

    _pieces: List[Tuple[float, float, float]] = PrivateAttr(default_factory=list)

    def model_post_init(self, __context) -> None:
        # 포락선이 ū 와 같은 구간들: (시작, 끝, 시작점의 기울기 상한)
        starts = [0.0] + [b.x_right for b in self.bridges]
        ends = [b.x_left for b in self.bridges] + [math.inf]
        highs = [self.base.corner_slope] + [b.slope for b in self.bridges]
        self._pieces = [(s, e, h) for s, e, h in zip(starts, ends, highs) if e > s]

    @property
    def reference_power(self) -> float:
        return self.base.reference_power

    @property
    def corner_slope(self) -> float:
        if self.bridges and self.bridges[0].x_left == 0.0:
            return self.bridges[0].slope
        return self.base.corner_slope

    @property
    def kinks(self) -> List[float]:
        if not self.bridges:
            return self.base.kinks
        slopes = [b.slope for b in self.bridges]
        corner = self.corner_slope
        if math.isfinite(corner) and corner not in slopes:
            slopes.append(corner)
        return sorted(slopes)

    @property
    def knots(self) -> List[float]:
        if not self.bridges:
            return self.base.knots
        return [x for b in self.bridges for x in (b.x_left, b.x_right) if x > 0]

    def value_range(self) -> Tuple[float, float]:
        return self.base.value_range()

    def _value(self, x):
        out = np.array(self.base._value(x), dtype=float)
        for b in self.bridges:
            on = b.contains(x)
            out[on] = b.line(x[on])
        return out

    def _marginal(self, x):
        out = np.array(self.base._marginal(x), dtype=float)
        for b in self.bridges:
            on = (x >= b.x_left) & (x <= b.x_right)
            out[on] = b.slope
        return out

    def _inverse_marginal(self, y):
        raise ContractViolationError(
            "Envelope inverse marginal is set-valued on bridge slopes; use the interval bounds"
        )

    def _inverse_marginal_bounds(self, y):
        if not self.bridges:
            return self.base._inverse_marginal_bounds(y)
        upper = np.zeros_like(y)
        done = np.zeros(y.shape, dtype=bool)
        # 기울기가 작은 (x가 큰) 구간부터
        for start, end, high in reversed(self._pieces):
            take = ~done & (y <= high)
            if take.any():
                x = self.base.segment_inverse(y[take], start, end)
                if start > 0.0:
                    x = np.where(y[take] == high, start, x)
                upper[take] = x
            done |= take
        lower = upper.copy()
        for b in self.bridges:
            lower[y == b.slope] = b.x_left
        return lower, upper

    def _inverse_value(self, v: float) -> float:
        for b in self.bridges:
            v_left, v_right = b.line(b.x_left), b.line(b.x_right)
            if v_left <= v <= v_right:
                return b.x_left + (v - v_left) / b.slope
        return self.base._inverse_value(v)


UtilitySpec = Annotated[
    Union[Isoelastic, Logarithmic, ShiftedPower, TwoPiecePower, Incentivized, ConcaveEnvelope],
    Field(discriminator="kind"),
]
ConcaveEnvelope.model_rebuild()


# --- 연산 ---

def evaluate(u: UtilityBase, x):
    return u.value(x)


def marginal(u: UtilityBase, x):
    return u.marginal(x)


def dual_eval(u: UtilityBase, y):
    return u.dual(y)


def inverse_marginal(u: UtilityBase, y):
    return u.inverse_marginal(y)


def effective_utility(p: float, contract: Contract) -> Incentivized:
    """계약을 합성한 유효효용 (정규화 (c2 + Σc3)^p)"""
    return Incentivized(p=p, contract=contract)


def _hull_grid(u: Incentivized, grid_size: int) -> np.ndarray:
    strikes = u.contract.strikes
    x = np.geomspace(min(strikes) * 1e-3, max(strikes) * 1e3, grid_size)
    x = np.union1d(x, np.asarray(strikes, dtype=float))
    if np.isfinite(u.value_at_zero):
        x = np.concatenate([[0.0], x])
    return x


def _upper_hull(x: np.ndarray, f: np.ndarray) -> List[int]:
    """단조 체인 상부 볼록껍질 (x 오름차순)"""
    hull: List[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (f[i] - f[a]) - (f[b] - f[a]) * (x[i] - x[a])
            if cross >= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def _refine_bridge(u: Incentivized, x_left: float, x_right: float) -> Bridge:
    """양 끝점 접선 조건으로 다리 끝점을 정밀화"""
    def value(x: float) -> float:
        return float(u._value(np.array([x]))[0])

    def slope_at(x: float) -> float:
        return float(u._marginal(np.array([x]))[0])

    if x_left == 0.0:
        v0 = value(0.0)

        def tangency(x: float) -> float:
            return slope_at(x) * x - (value(x) - v0)

        lo, hi = x_right / 1.05, x_right * 1.05
        right = find_root_monotone(tangency, lo, hi, tol=1e-15 * x_right)
        slope = (value(right) - v0) / right
        return Bridge(x_left=0.0, x_right=right, slope=slope, intercept=v0)

    def residual(z):
        xl, xr = np.exp(z)
        chord = (value(xr) - value(xl)) / (xr - xl)
        return [slope_at(xl) / chord - 1.0, slope_at(xr) / chord - 1.0]

    sol = optimize.root(residual, np.log([x_left, x_right]), method="hybr", options={"xtol": 1e-14})
    # hybr 는 잔차가 기계 정밀도에 닿아도 xtol 미달로 실패를 보고할 수 있음
    if not (sol.success or np.max(np.abs(sol.fun)) <= TANGENCY_RESIDUAL_TOL):
        raise ConvergenceError(f"Envelope tangency refinement failed near [{x_left}, {x_right}]: {sol.message}")
    xl, xr = np.exp(sol.x)
    if not xl < xr:
        raise ConvergenceError(f"Envelope tangency refinement collapsed the bridge near [{x_left}, {x_right}]")
    slope = (value(xr) - value(xl)) / (xr - xl)
    return Bridge(x_left=float(xl), x_right=float(xr), slope=float(slope), intercept=float(value(xl) - slope * xl))


def concave_envelope(u: UtilityBase, grid_size: int = 100000) -> ConcaveEnvelope:
    """
    최소 오목 지배함수

    로그 간격 격자 위 상부 볼록껍질로 다리 구간을 잡고 접선 조건으로 정밀화한다.

    Args:
        u: 오목하지 않은 구간이 유한개인 증가함수 (Incentivized)
        grid_size: 껍질 격자 점 수

    Returns:
        ConcaveEnvelope: 이미 오목하면 다리 없음
    """
    if u.concave:
        return ConcaveEnvelope(base=u, bridges=())
    if not isinstance(u, Incentivized):
        raise ParameterError(f"Concave envelope is only constructed for incentivized utilities, got {type(u).__name__}")

    x = _hull_grid(u, grid_size)
    f = np.asarray(u.payoff_value(x), dtype=float)
    hull = _upper_hull(x, f)

    candidates: List[Tuple[int, int]] = []
    for a, b in zip(hull, hull[1:]):
        if b - a < 2:
            continue
        inner = slice(a + 1, b)
        chord = f[a] + (f[b] - f[a]) * (x[inner] - x[a]) / (x[b] - x[a])
        tol = 1e-9 * (1.0 + max(abs(f[a]), abs(f[b])))
        if np.max(chord - f[inner]) > tol:
            if candidates and candidates[-1][1] == a:
                candidates[-1] = (candidates[-1][0], b)
            else:
                candidates.append((a, b))

    bridges = [_refine_bridge(u, float(x[a]), float(x[b])) for a, b in candidates]

    # 정밀화 후 겹치는 다리는 합쳐서 다시 정밀화
    merged = True
    while merged and len(bridges) > 1:
        merged = False
        for k in range(len(bridges) - 1):
            if bridges[k].x_right >= bridges[k + 1].x_left:
                joined = _refine_bridge(u, bridges[k].x_left, bridges[k + 1].x_right)
                bridges = bridges[:k] + [joined] + bridges[k + 2:]
                merged = True
                break

    logger.info(f"Concave envelope built with {len(bridges)} bridge(s)", extra={
        "bridges": [(b.x_left, b.x_right, b.slope) for b in bridges],
        "grid_size": int(x.size),
    })
    return ConcaveEnvelope(base=u, bridges=tuple(bridges))


def validate_assumptions(u: UtilityBase, p_ref: float) -> AssumptionReport:
    """
    고자산 한계효용 동등성과 저자산 조건을 수치로 점검

    Args:
        u: 검사할 효용
        p_ref: 기준 isoelastic 효용의 p

    Returns:
        AssumptionReport: 보고 전용 (예외 없음)
    """
    high = np.array(HIGH_WEALTH_POINTS)
    ratios = np.asarray(u._marginal(high), dtype=float) / np.power(high, p_ref - 1.0)
    converged = bool(np.isfinite(ratios[-1]) and abs(ratios[-1] - 1.0) < 1e-3)

    low = np.array(LOW_WEALTH_POINTS)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        values = np.asarray(u._value(low), dtype=float)
        if p_ref > 0:
            low_ratios = values
        else:
            low_ratios = values / np.power(low, p_ref - 1.0)
    first, last = low_ratios[0], low_ratios[-1]
    if p_ref > 0:
        # 하한 유계: 10^-2 -> 10^-5 감소분보다 10^-5 -> 10^-8 감소분이 뚜렷이 작아야 함
        mid = low_ratios[3]
        bounded = bool(np.isfinite(last) and (mid - last) <= 0.9 * (first - mid) + 1e-12)
    else:
        # liminf U(x)/Ũ'(x) > -∞ 의 수치 대용
        bounded = bool(np.isfinite(last) and last >= -10.0 * max(1.0, abs(first)))

    vanishes = None
    if p_ref < 0:
        far = float(u._value(np.array([1e12]))[0])
        vanishes = bool(abs(far) <= 1e-3 * max(1.0, abs(float(u._value(np.array([1.0]))[0]))))

    verdict = u.lowwealth_verdict if isinstance(u, TwoPiecePower) else None
    return AssumptionReport(
        p_ref=p_ref,
        high_wealth_points=high.tolist(),
        marginal_ratios=ratios.tolist(),
        marginal_converged=converged,
        low_wealth_points=low.tolist(),
        lowwealth_ratios=low_ratios.tolist(),
        lowwealth_bounded=bounded,
        vanishes_at_infinity=vanishes,
        lowwealth_ok=bounded and vanishes is not False,
        concave=u.concave,
        analytic_lowwealth_verdict=verdict,
    )
