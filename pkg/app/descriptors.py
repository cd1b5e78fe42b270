"""
명령행/설정 파일의 효용 서술자 파싱

    isoelastic:p=-1
    log
    shifted:p=-1,a=1
    twopiece:p=-1,pstar=-3,xhi=8[,interp=exp_marginal]
    incentive:p=0.5,c1=1,c2=2,legs=3@4+2@6
    power-incentive:p=-1,alpha=0.8
"""
from typing import Dict, Tuple

from pydantic import ValidationError

from app.exceptions import ConfigError
from app.incentives import power_incentive_utility
from app.models import Contract, InterpolationSpec, OptionLeg
from app.utility import Isoelastic, Logarithmic, ShiftedPower, TwoPiecePower, UtilityBase, effective_utility

_ALLOWED_KEYS = {
    "isoelastic": {"p"},
    "log": set(),
    "shifted": {"p", "a"},
    "twopiece": {"p", "pstar", "xhi", "interp"},
    "incentive": {"p", "c1", "c2", "legs"},
    "power-incentive": {"p", "alpha"},
}


def split_descriptor(text: str) -> Tuple[str, Dict[str, str]]:
    """'kind:k=v,k=v' 를 (kind, {k: v}) 로"""
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    if kind not in _ALLOWED_KEYS:
        raise ConfigError(f"Unknown utility kind '{kind}' (expected one of {sorted(_ALLOWED_KEYS)})")
    fields: Dict[str, str] = {}
    for item in filter(None, (part.strip() for part in rest.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip().lower()
        if not sep or not value.strip():
            raise ConfigError(f"Malformed descriptor field '{item}' in '{text}'")
        if key not in _ALLOWED_KEYS[kind]:
            raise ConfigError(f"Unknown field '{key}' for utility kind '{kind}'")
        fields[key] = value.strip()
    return kind, fields


def _number(fields: Dict[str, str], key: str, default: float = None) -> float:
    if key not in fields:
        if default is None:
            raise ConfigError(f"Missing required field '{key}'")
        return default
    try:
        return float(fields[key])
    except ValueError:
        raise ConfigError(f"Field '{key}' must be a number, got '{fields[key]}'")


def parse_legs(text: str) -> Tuple[OptionLeg, ...]:
    """'3@4+2@6' -> (OptionLeg(3, 4), OptionLeg(2, 6))"""
    legs = []
    for item in filter(None, (part.strip() for part in text.split("+"))):
        quantity, sep, strike = item.partition("@")
        if not sep:
            raise ConfigError(f"Option leg '{item}' must look like quantity@strike")
        try:
            legs.append(OptionLeg(quantity=float(quantity), strike=float(strike)))
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"Invalid option leg '{item}': {exc}")
    return tuple(legs)


def parse_contract(fields: Dict[str, str]) -> Contract:
    try:
        return Contract(
            c1=_number(fields, "c1", 0.0),
            c2=_number(fields, "c2"),
            legs=parse_legs(fields.get("legs", "")),
        )
    except ValidationError as exc:
        raise ConfigError(f"Invalid contract: {exc.errors()[0]['msg']}")


def parse_utility(text: str) -> UtilityBase:
    """
    서술자를 효용 객체로

    Raises:
        ConfigError: 형식 오류, 알 수 없는 종류나 필드
        ParameterError 등: 값이 효용의 정의역 밖일 때 (생성자에서 발생)
    """
    kind, fields = split_descriptor(text)
    if kind == "power-incentive":
        return power_incentive_utility(_number(fields, "alpha"), _number(fields, "p"))
    try:
        if kind == "isoelastic":
            return Isoelastic(p=_number(fields, "p"))
        if kind == "log":
            return Logarithmic()
        if kind == "shifted":
            return ShiftedPower(p=_number(fields, "p"), a=_number(fields, "a", 0.0))
        if kind == "twopiece":
            interpolation = InterpolationSpec(
                kind=fields.get("interp", "exp_marginal"),
                x_hi=_number(fields, "xhi", 8.0),
            )
            return TwoPiecePower(p=_number(fields, "p"), p_star=_number(fields, "pstar"), interpolation=interpolation)
        return effective_utility(_number(fields, "p"), parse_contract(fields))
    except ValidationError as exc:
        raise ConfigError(f"Invalid utility '{text}': {exc.errors()[0]['msg']}")

