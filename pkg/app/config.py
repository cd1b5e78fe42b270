import os
import yaml
from typing import List, Optional
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

# .env 파일 로드 (LAB_CONFIG, LAB_LOG_LEVEL 같은 환경변수를 위해 유지)
load_dotenv()


class MarketConfig(BaseModel):
    mu: float
    sigma: float
    r: float


class NumericsConfig(BaseModel):
    nodes: int = Field(201, ge=21)
    root_tol: float = Field(1e-12, gt=0)
    bracket_factor: float = Field(10.0, gt=1)
    max_expansions: int = Field(40, ge=1)
    tail_width: float = Field(30.0, gt=0)
    panel_order: int = Field(8, ge=2)
    hull_grid_size: int = Field(100000, ge=1000)


class MonteCarloConfig(BaseModel):
    n_paths: int = Field(200000, ge=2)
    seed: int = 0
    chunk_size: int = Field(16384, ge=1)
    workers: int = Field(1, ge=1)


class RobustnessDefaults(BaseModel):
    utility: str
    p_ref: float
    horizons: List[float]


class CounterexampleDefaults(BaseModel):
    p: float
    p_star: float
    x_hi: float
    horizons: List[float]


class IncentivesDefaults(BaseModel):
    utility: str
    horizons: List[float]


class ReplicateDefaults(BaseModel):
    alpha: float
    kbar: float
    n_strikes: int
    k_min: float
    k_max: float
    x_min: float
    x_max: float
    spacing: str = "geometric"


class ValidateDefaults(BaseModel):
    utility: str
    p_ref: float


class PriceSquareDefaults(BaseModel):
    s0: float
    horizons: List[float]


class ExperimentsConfig(BaseModel):
    workers: int = Field(1, ge=1)
    x0: float = Field(1.0, gt=0)
    robustness: RobustnessDefaults
    counterexample: CounterexampleDefaults
    incentives: IncentivesDefaults
    replicate: ReplicateDefaults
    validate_: ValidateDefaults = Field(..., alias="validate")
    price_square: PriceSquareDefaults


class LoggingConfig(BaseModel):
    level: str
    file_path: str
    max_file_size_mb: int
    backup_count: int
    json_console: bool = True


class OutputConfig(BaseModel):
    directory: str
    format: str = "csv"


class Config(BaseModel):
    market: MarketConfig
    numerics: NumericsConfig
    montecarlo: MonteCarloConfig
    experiments: ExperimentsConfig
    logging: LoggingConfig
    output: OutputConfig


class EnvSettings(BaseSettings):
    """환경변수 기반 오버라이드 (LAB_ 접두사)"""
    model_config = SettingsConfigDict(env_prefix="LAB_", extra="ignore")

    config: Optional[str] = None
    log_level: Optional[str] = None


def default_config_path() -> str:
    base_dir = os.path.dirname(os.path.abspath(__file__))
    root_dir = os.path.abspath(os.path.join(base_dir, ".."))
    return os.path.join(root_dir, "config.yaml")


def load_config(path: Optional[str] = None) -> Config:
    """
    YAML 설정 파일을 읽어 Config 모델로 변환

    Args:
        path: 설정 파일 경로 (없으면 LAB_CONFIG, 그다음 루트의 config.yaml)

    Returns:
        Config: 검증된 설정
    """
    env = EnvSettings()
    config_path = path or env.config or default_config_path()

    with open(config_path, "r", encoding="utf-8") as f:
        config_dict = yaml.safe_load(f)

    loaded = Config(**config_dict)
    if env.log_level:
        loaded.logging.level = env.log_level.upper()
    return loaded


# 전역 설정 인스턴스
config = load_config()
