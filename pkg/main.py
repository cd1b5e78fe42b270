import argparse
import os
import sys
from typing import Any, Dict, List, Optional

import yaml
from pydantic import ValidationError

from app import __version__
from app.config import config
from app.exceptions import ConfigError, LabError, UsageError
from app.experiments import ExperimentService
from app.logging_config import logger, set_level
from app.report_writer import write_report, write_table
from app.schemas import COMMANDS, ExperimentConfig


class LabArgumentParser(argparse.ArgumentParser):
    """사용법 오류를 SystemExit(2) 대신 UsageError(64)로 올림"""

    def error(self, message: str):
        raise UsageError(message)


def _horizon_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"horizons must be comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = LabArgumentParser(
        prog="turnpike-lab",
        description="장기 포트폴리오 강건성 수치 실험",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="command", parser_class=LabArgumentParser)
    subparsers.required = True

    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", dest="experiment_file", help="실험 설정 YAML 파일 (플래그가 우선)")
        sub.add_argument("--mu", type=float)
        sub.add_argument("--sigma", type=float)
        sub.add_argument("--r", type=float)
        sub.add_argument("--p", type=float, help="counterexample 의 p")
        sub.add_argument("--pstar", dest="p_star", type=float)
        sub.add_argument("--xhi", dest="x_hi", type=float)
        sub.add_argument("--p-ref", dest="p_ref", type=float)
        sub.add_argument("--utility", help="효용 서술자 (예: shifted:p=-1,a=1)")
        sub.add_argument("--horizons", type=_horizon_list, help="쉼표로 구분한 만기 목록")
        sub.add_argument("--method", choices=["quadrature", "montecarlo"])
        sub.add_argument("--nodes", type=int)
        sub.add_argument("--paths", type=int)
        sub.add_argument("--seed", type=int)
        sub.add_argument("--workers", type=int)
        sub.add_argument("--x0", type=float)
        sub.add_argument("--alpha", type=float, help="replicate 의 거듭제곱")
        sub.add_argument("--kbar", type=float)
        sub.add_argument("--n-strikes", dest="n_strikes", type=int)
        sub.add_argument("--s0", type=float)
        sub.add_argument("--out")
        sub.add_argument("--format", choices=["csv", "json"])
        sub.add_argument("--log-level", dest="log_level",
                         choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    return parser


def command_defaults(command: str) -> Dict[str, Any]:
    """config.yaml 의 기본값으로 채운 실험 설정 딕셔너리"""
    experiments = config.experiments
    settings: Dict[str, Any] = {
        "command": command,
        "market": config.market.model_dump(),
        "nodes": config.numerics.nodes,
        "mc": config.montecarlo.model_dump(),
        "x0": experiments.x0,
        "workers": experiments.workers,
        "format": config.output.format,
    }
    if command == "robustness":
        settings.update(experiments.robustness.model_dump())
    elif command == "counterexample":
        settings.update(experiments.counterexample.model_dump())
    elif command == "incentives":
        settings.update(experiments.incentives.model_dump())
    elif command == "replicate":
        settings["replicate"] = experiments.replicate.model_dump()
    elif command == "validate":
        settings.update(experiments.validate_.model_dump())
    elif command == "price-square":
        settings.update(experiments.price_square.model_dump())
    return settings


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_experiment_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
    except OSError as exc:
        raise ConfigError(f"Cannot read experiment file {path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Experiment file {path} is not valid YAML: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"Experiment file {path} must hold a key-value mapping")
    return loaded


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    market = {k: getattr(args, k) for k in ("mu", "sigma", "r") if getattr(args, k) is not None}
    if market:
        overrides["market"] = market
    mc = {"n_paths": args.paths, "seed": args.seed}
    mc = {k: v for k, v in mc.items() if v is not None}
    if mc:
        overrides["mc"] = mc
    replication = {"alpha": args.alpha, "kbar": args.kbar, "n_strikes": args.n_strikes}
    replication = {k: v for k, v in replication.items() if v is not None}
    if replication:
        overrides["replicate"] = replication
    for key in ("p", "p_star", "x_hi", "p_ref", "utility", "horizons", "method", "nodes",
                "workers", "x0", "s0", "out", "format"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return overrides


def build_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """기본값 <- 실험 파일 <- 명령행 플래그 순서로 덮어쓴 설정"""
    settings = command_defaults(args.command)
    if args.experiment_file:
        file_settings = load_experiment_file(args.experiment_file)
        file_command = file_settings.pop("command", args.command)
        if file_command != args.command:
            raise ConfigError(f"Experiment file is for '{file_command}', not '{args.command}'")
        settings = _merge(settings, file_settings)
    settings = _merge(settings, flag_overrides(args))
    if not settings.get("out"):
        extension = "json" if args.command == "validate" else settings["format"]
        settings["out"] = os.path.join(config.output.directory, f"{args.command}.{extension}")
    return ExperimentConfig(**settings)


def run(experiment: ExperimentConfig) -> List[str]:
    """실험을 실행하고 기록한 파일 경로 목록을 돌려줌"""
    service = ExperimentService(experiment)
    if experiment.command == "validate":
        report, table = service.run()
        stem, _ = os.path.splitext(experiment.out)
        metadata = service.metadata({})
        return [
            write_report(report, experiment.out, metadata),
            write_table(table, f"{stem}_table.csv", "csv", metadata),
        ]
    frame, extra = service.run()
    return [write_table(frame, experiment.out, experiment.format, service.metadata(extra))]


# --- 예외 핸들러 ---

def handle_lab_error(exc: LabError) -> int:
    """실험실 예외 핸들러"""
    logger.warning(f"{type(exc).__name__}: {exc.detail}", extra={
        "exit_code": exc.exit_code,
        "error_type": type(exc).__name__,
    })
    print(f"error: {exc.detail}", file=sys.stderr)
    return exc.exit_code


def handle_validation_error(exc: ValidationError) -> int:
    """설정 검증 예외 핸들러"""
    logger.warning("Experiment configuration is invalid", extra={"errors": exc.errors(include_url=False)})
    print(f"error: invalid configuration: {exc}", file=sys.stderr)
    return 2


def handle_unexpected_error(exc: Exception) -> int:
    """일반 예외 핸들러"""
    logger.error("Unhandled exception caught by general handler", exc_info=True)
    print(f"error: {exc}", file=sys.stderr)
    return 3


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.log_level:
            set_level(args.log_level)
        experiment = build_experiment(args)
        written = run(experiment)
    except LabError as exc:
        return handle_lab_error(exc)
    except ValidationError as exc:
        return handle_validation_error(exc)
    except Exception as exc:
        return handle_unexpected_error(exc)

    logger.info(f"Command '{experiment.command}' finished", extra={"outputs": written})
    return 0


if __name__ == "__main__":
    sys.exit(main())
