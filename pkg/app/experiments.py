"""
명령별 실험 실행 서비스: ExperimentConfig 를 받아 결과 표와 메타데이터를 만든다.
"""
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd

from app import __version__
from app.counterexample import (
    ce_collapse_curve,
    check_param_restriction,
    divergence_exponent,
)
from app.descriptors import parse_utility, split_descriptor
from app.exceptions import ConfigError, ParameterError
from app.incentives import (
    carr_madan_legs,
    gamma_star_check,
    grant_value_curve,
    replicate,
    replication_table,
    risk_neutral_second_moment,
    square_contract_price,
    strike_grid,
)
from app.logging_config import logger
from app.models import InterpolationSpec
from app.report_writer import to_frame
from app.schemas import ExperimentConfig
from app.solver import ce_ratio, sweep_horizons
from app.utility import ConcaveEnvelope, Incentivized, concave_envelope, validate_assumptions

ROBUSTNESS_COLUMNS = {
    "horizon": "T", "ce_optimal": "ce_opt", "ce_isoelastic": "ce_iso", "ratio": "ratio",
    "quad_error": "quad_err", "rate_optimal": "rate_opt", "rate_isoelastic": "rate_iso",
    "multiplier_ratio": "multiplier_ratio", "mc_stderr": "mc_stderr",
}
COUNTEREXAMPLE_COLUMNS = {
    "horizon": "T", "ratio": "ratio", "lowwealth_ratio": "lowwealth_ratio_closed_form",
    "exponent": "exponent", "ce_optimal": "ce_opt", "ce_isoelastic": "ce_iso",
    "utility_ratio": "utility_ratio", "quad_error": "quad_err",
}
GRANT_COLUMNS = {
    "horizon": "T", "ce_plain": "ce_plain", "ce_incentivized": "ce_incentivized",
    "premium": "premium", "ce_private_plain": "ce_private_plain", "quad_error": "quad_err",
}
GAMMA_STAR_COLUMNS = {
    "horizon": "T", "alpha": "alpha", "gamma": "gamma", "gamma_star": "gamma_star", "weight": "weight",
    "ce_incentivized": "ce_incentivized", "ce_closed_form": "ce_closed_form", "rel_error": "rel_error",
}

Table = Tuple[pd.DataFrame, Dict[str, Any]]


class ExperimentService:
    """하나의 ExperimentConfig 에 대해 명령을 실행"""

    def __init__(self, experiment: ExperimentConfig):
        self.experiment = experiment
        self.mkt = experiment.market

    def metadata(self, extra: Dict[str, Any]) -> Dict[str, Any]:
        """출력 파일 머리의 메타데이터 (시간 정보 없음)"""
        meta = {
            "tool": "turnpike-lab",
            "version": __version__,
            "command": self.experiment.command,
            "config": self.experiment.model_dump(mode="json"),
            "seed": self.experiment.mc.seed,
        }
        meta.update(extra)
        return meta

    def _require_horizons(self) -> List[float]:
        horizons = self.experiment.horizons
        if not horizons:
            raise ConfigError(f"Command '{self.experiment.command}' needs at least one horizon")
        if self.experiment.command != "price-square" and horizons[0] <= 0:
            raise ConfigError("Horizons must be positive for this command")
        return horizons

    def _require_utility(self) -> str:
        if not self.experiment.utility:
            raise ConfigError(f"Command '{self.experiment.command}' needs a utility descriptor")
        return self.experiment.utility

    def run(self) -> Table:
        handlers = {
            "robustness": self.robustness,
            "counterexample": self.counterexample,
            "incentives": self.incentives,
            "replicate": self.replicate,
            "validate": self.validate,
            "price-square": self.price_square,
        }
        logger.info(f"Running command '{self.experiment.command}'", extra={
            "market": self.mkt.model_dump(), "horizons": self.experiment.horizons
        })
        return handlers[self.experiment.command]()

    # --- 명령 ---

    def robustness(self) -> Table:
        """isoelastic 포트폴리오 CE 비율의 만기별 수렴"""
        exp = self.experiment
        u = parse_utility(self._require_utility())
        p_ref = exp.p_ref if exp.p_ref is not None else u.reference_power
        mc = exp.mc if exp.method == "montecarlo" else None

        def point(T: float):
            return ce_ratio(u, self.mkt, p_ref, T, exp.x0, exp.nodes, method=exp.method, mc=mc)

        points = sweep_horizons(point, self._require_horizons(), exp.workers)
        frame = to_frame(points, ROBUSTNESS_COLUMNS)
        return frame, {"p_ref": p_ref, "max_quad_error": float(frame["quad_err"].max())}

    def counterexample(self) -> Table:
        """두 조각 효용의 CE 비율 붕괴와 저자산 비율"""
        exp = self.experiment
        if exp.p is None or exp.p_star is None:
            raise ConfigError("counterexample needs both p and p_star")
        restriction = check_param_restriction(self.mkt, exp.p, exp.p_star)
        interp = InterpolationSpec(kind=exp.interp, x_hi=exp.x_hi)
        points = ce_collapse_curve(self.mkt, exp.p, exp.p_star, interp, self._require_horizons(),
                                   exp.x0, exp.nodes, exp.workers)
        frame = to_frame(points, COUNTEREXAMPLE_COLUMNS)
        return frame, {
            "restriction": restriction.model_dump(),
            "exponent": divergence_exponent(self.mkt, exp.p, exp.p_star),
            "max_quad_error": float(frame["quad_err"].max()),
        }

    def incentives(self) -> Table:
        """옵션 부여의 CE 프리미엄, power-incentive 서술자면 gamma* 검증"""
        exp = self.experiment
        horizons = self._require_horizons()
        u = parse_utility(self._require_utility())
        kind, fields = split_descriptor(self._require_utility())
        if kind == "power-incentive":
            alpha, p = float(fields["alpha"]), float(fields["p"])
            rows = [gamma_star_check(alpha, 1.0 - p, self.mkt, T, exp.x0, exp.nodes) for T in horizons]
            frame = to_frame(rows, GAMMA_STAR_COLUMNS)
            return frame, {"max_rel_error": float(frame["rel_error"].max())}

        if not isinstance(u, Incentivized):
            raise ConfigError("incentives needs an 'incentive:' or 'power-incentive:' utility descriptor")
        points = grant_value_curve(u.p, u.contract, self.mkt, horizons, exp.x0, exp.nodes, exp.workers)
        frame = to_frame(points, GRANT_COLUMNS)
        return frame, {"contract": u.contract.model_dump(), "max_quad_error": float(frame["quad_err"].max())}

    def replicate(self) -> Table:
        """x^alpha 의 Carr-Madan 정적 복제 표"""
        settings = self.experiment.replicate
        if not settings.x_min < settings.x_max:
            raise ParameterError(f"Evaluation range must satisfy x_min < x_max, got {settings.x_min}, {settings.x_max}")
        strikes = strike_grid(settings.k_min, settings.k_max, settings.n_strikes, settings.spacing)
        portfolio = carr_madan_legs(settings.alpha, settings.kbar, strikes)
        xs = np.geomspace(settings.x_min, settings.x_max, settings.n_points)
        frame = to_frame(replication_table(portfolio, xs))
        _, max_rel_error = replicate(portfolio, xs)
        return frame, {
            "n_puts": int(portfolio.put_strikes.size),
            "n_calls": int(portfolio.call_strikes.size),
            "max_rel_error": max_rel_error,
        }

    def validate(self) -> Tuple[Dict[str, Any], pd.DataFrame]:
        """
        가정 점검 보고서와 (x, ū(x), 포락선(x)) 표.
        포락선 열은 계약 효용일 때만 ū 와 다르다
        """
        exp = self.experiment
        u = parse_utility(self._require_utility())
        p_ref = exp.p_ref if exp.p_ref is not None else u.reference_power
        report = validate_assumptions(u, p_ref).model_dump()

        xs = np.linspace(0.0, 12.0, 241)[1:]
        table = {"x": xs, "utility": np.asarray(u.value(xs), dtype=float)}
        if isinstance(u, Incentivized):
            envelope: ConcaveEnvelope = concave_envelope(u)
            report["bridges"] = [b.model_dump() for b in envelope.bridges]
            table["envelope"] = np.asarray(envelope.value(xs), dtype=float)
        return report, pd.DataFrame(table)

    def price_square(self) -> Table:
        """r = 0 에서 e^{-σ²T} S_T² 계약 가격"""
        exp = self.experiment
        rows = []
        for T in self._require_horizons():
            rows.append({
                "T": T,
                "s0": exp.s0,
                "sigma": self.mkt.sigma,
                "second_moment": risk_neutral_second_moment(exp.s0, self.mkt.sigma, T, exp.nodes),
                "price": square_contract_price(exp.s0, self.mkt.sigma, T, exp.nodes),
            })
        return pd.DataFrame(rows), {}
