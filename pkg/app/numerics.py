"""
수치 기본 도구: 표준정규 기댓값 적분 규칙, 단조 근 찾기, 시드 고정 Monte Carlo.

모든 기댓값은 표준정규 변수 Z에 대한 적분 E[f(Z)]로 표현된다.
불연속/꺾인 점이 알려진 피적분함수는 그 점에서 패널을 나누는
piecewise_rule을 사용하고, 지시함수는 정규 CDF 닫힌 형태로 계산한다.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Iterable, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import optimize, special
from scipy.stats import norm

from app.exceptions import (
    BracketingError,
    ConvergenceError,
    EvaluationError,
    ParameterError,
)
from app.logging_config import logger
from app.models import McConfig, TerminalLaw

MAX_HERMITE_NODES = 10 ** 4
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class QuadratureRule(BaseModel):
    """표준정규 밀도에 대해 정규화된 적분 규칙 (가중치 합 = 1)"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self) -> int:
        return self.nodes.size


@lru_cache(maxsize=64)
def _hermite_nodes(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = special.roots_hermitenorm(n)
    weights = weights / _SQRT_2PI
    # 큰 n에서 꼬리 가중치가 0으로 언더플로되면 제거
    keep = weights > 0.0
    nodes, weights = nodes[keep], weights[keep]
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(n: int) -> QuadratureRule:
    """
    확률론자 Hermite 다항식 기반 n점 Gauss 규칙

    Args:
        n: 노드 수 (1 ~ 10^4)

    Returns:
        QuadratureRule: 차수 2n-1 이하 다항식에 대해 E[f(Z)]를 정확히 계산

    Raises:
        ParameterError: n이 범위를 벗어날 때
    """
    if not isinstance(n, (int, np.integer)) or n < 1 or n > MAX_HERMITE_NODES:
        raise ParameterError(f"Gauss-Hermite order must be in [1, {MAX_HERMITE_NODES}], got {n}")
    nodes, weights = _hermite_nodes(int(n))
    return QuadratureRule(nodes=nodes, weights=weights, order=int(n))


def _evaluate_at_nodes(f: Callable, nodes: np.ndarray) -> np.ndarray:
    values = np.asarray(f(nodes), dtype=float)
    if values.ndim == 0:
        values = np.full(nodes.shape, float(values))
    if values.shape != nodes.shape:
        values = np.broadcast_to(values, nodes.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        node = float(nodes[np.argmax(bad)])
        raise EvaluationError(f"Integrand is not finite at node z={node!r}", node=node)
    return values


def expect_normal(f: Callable, rule: QuadratureRule) -> float:
    """
    E[f(Z)] ≈ Σ w_i f(z_i). f는 numpy 배열을 받아 같은 모양의 배열을 반환해야 함

    Raises:
        EvaluationError: 어떤 노드에서든 f가 유한하지 않을 때 (해당 노드 포함)
    """
    values = _evaluate_at_nodes(f, rule.nodes)
    return float(np.dot(rule.weights, values))


def normal_mass_below(z) -> float:
    """P(Z <= z). 지시함수 피적분은 노드 대신 이 닫힌 형태를 쓴다"""
    return norm.cdf(z)


@lru_cache(maxsize=16)
def _legendre_nodes(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def piecewise_rule(
    breakpoints: Iterable[float] = (),
    n_panels: int = 201,
    order: int = 8,
    width: float = 30.0,
) -> QuadratureRule:
    """
    [-width, width] 위의 합성 Gauss-Legendre 규칙에 정규 밀도를 곱한 규칙.
    breakpoints 에서 패널을 나누므로 그 점에서 불연속이거나 꺾인 피적분함수도
    패널 안에서는 매끄럽다.
    """
    if n_panels < 1 or order < 1:
        raise ParameterError(f"Invalid piecewise rule: n_panels={n_panels}, order={order}")
    edges = np.linspace(-width, width, n_panels + 1)
    inner = [b for b in breakpoints if np.isfinite(b) and -width < b < width]
    if inner:
        edges = np.unique(np.concatenate([edges, np.asarray(inner, dtype=float)]))
    gl_nodes, gl_weights = _legendre_nodes(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo) + half * gl_nodes[None, :]).ravel()
    weights = (half * gl_weights[None, :]).ravel() * norm.pdf(nodes)
    keep = weights > 0.0
    return QuadratureRule(nodes=nodes[keep], weights=weights[keep], order=order * (edges.size - 1))


def expect_normal_piecewise(f: Callable, breakpoints: Iterable[float] = (), n_panels: int = 201,
                            order: int = 8, width: float = 30.0) -> float:
    return expect_normal(f, piecewise_rule(breakpoints, n_panels, order, width))


def find_root_monotone(
    g: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    maxiter: int = 500,
) -> float:
    """
    단조 함수 g의 구간 [lo, hi] 안 근 (Brent: 역이차보간/할선 + 이분법 대체)

    Returns:
        float: 초기 구간 안의 근

    Raises:
        BracketingError: g(lo), g(hi) 부호가 같을 때
        ConvergenceError: maxiter 안에 수렴하지 않을 때
    """
    if lo > hi:
        lo, hi = hi, lo
    g_lo, g_hi = float(g(lo)), float(g(hi))
    if not (np.isfinite(g_lo) and np.isfinite(g_hi)):
        raise EvaluationError(f"Root function is not finite on bracket [{lo}, {hi}]: g={g_lo}, {g_hi}")
    if g_lo == 0.0:
        return float(lo)
    if g_hi == 0.0:
        return float(hi)
    if g_lo * g_hi > 0.0:
        raise BracketingError(f"No sign change on bracket [{lo}, {hi}]: g(lo)={g_lo}, g(hi)={g_hi}")

    root, result = optimize.brentq(g, lo, hi, xtol=tol, maxiter=maxiter, full_output=True, disp=False)
    if not result.converged:
        raise ConvergenceError(
            f"Root finder did not converge in {maxiter} iterations ({result.flag}) on [{lo}, {hi}]"
        )
    return float(min(max(root, lo), hi))


def _chunk_statistics(f: Callable, law: TerminalLaw, cfg: McConfig, chunk: int) -> Tuple[int, float, float]:
    size = min(cfg.chunk_size, cfg.n_paths - chunk * cfg.chunk_size)
    # (seed, chunk) 로 키가 정해지는 카운터 기반 생성기
    generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(chunk,))))
    z = generator.standard_normal(size)
    draws = law.sample(z)
    if not np.all(np.isfinite(draws)):
        raise EvaluationError(f"Non-finite draw in Monte Carlo chunk {chunk}")
    values = _evaluate_at_nodes(f, draws)
    mean = float(values.mean())
    m2 = float(np.sum((values - mean) ** 2))
    return size, mean, m2


def mc_expect(f: Callable, law: TerminalLaw, cfg: McConfig) -> Tuple[float, float]:
    """
    로그정규 표본 위 f의 표본평균과 표준오차

    Args:
        f: 분포 값(배열)을 받는 함수
        law: 표본을 뽑을 로그정규 분포
        cfg: 경로 수, 시드, 청크 크기

    Returns:
        (estimate, stderr): stderr = 표본표준편차 / sqrt(n_paths)

    Raises:
        ParameterError: n_paths < 2
        EvaluationError: 비유한 표본 또는 함수값
    """
    if cfg.n_paths < 2:
        raise ParameterError(f"Monte Carlo needs at least 2 paths, got {cfg.n_paths}")
    n_chunks = -(-cfg.n_paths // cfg.chunk_size)

    def run(chunk: int):
        return _chunk_statistics(f, law, cfg, chunk)

    if cfg.workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            stats = list(executor.map(run, range(n_chunks)))
    else:
        stats = [run(chunk) for chunk in range(n_chunks)]

    # 청크 순서대로 병합 (Chan 병렬 분산 공식)
    count, mean, m2 = stats[0]
    for size, chunk_mean, chunk_m2 in stats[1:]:
        total = count + size
        delta = chunk_mean - mean
        mean = mean + delta * size / total
        m2 = m2 + chunk_m2 + delta * delta * count * size / total
        count = total

    stderr = math.sqrt(m2 / (count - 1)) / math.sqrt(count)
    logger.debug(f"Monte Carlo estimate {mean:.6g} ± {stderr:.2g}", extra={
        "n_paths": cfg.n_paths, "chunks": n_chunks, "seed": cfg.seed
    })
    return mean, stderr
