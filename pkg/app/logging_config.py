import logging
import os
from logging.handlers import RotatingFileHandler
from pythonjsonlogger import jsonlogger
from app.config import config


def setup_logging():
    """로깅 설정"""
    # logs 디렉토리 생성
    log_dir = os.path.dirname(config.logging.file_path)
    if log_dir and not os.path.exists(log_dir):
        os.makedirs(log_dir, exist_ok=True)

    # 로거 생성
    logger = logging.getLogger("turnpike_lab")
    logger.setLevel(getattr(logging, config.logging.level))
    logger.propagate = False

    # 기존 핸들러 제거
    logger.handlers.clear()

    # --- 파일 핸들러 ---
    max_bytes = config.logging.max_file_size_mb * 1024 * 1024
    file_handler = RotatingFileHandler(
        config.logging.file_path,
        maxBytes=max_bytes,
        backupCount=config.logging.backup_count,
        encoding='utf-8'
    )
    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    file_handler.setFormatter(file_formatter)
    logger.addHandler(file_handler)

    # --- 콘솔 핸들러 (stderr, 결과 파일/표준출력과 분리) ---
    console_handler = logging.StreamHandler()
    if config.logging.json_console:
        formatter_string = '%(asctime)s %(levelname)s %(message)s'
        console_handler.setFormatter(jsonlogger.JsonFormatter(
            formatter_string,
            rename_fields={'levelname': 'severity', 'asctime': 'timestamp'},
            json_ensure_ascii=False
        ))
    else:
        console_handler.setFormatter(file_formatter)
    logger.addHandler(console_handler)

    return logger


def set_level(level: str) -> None:
    """CLI --log-level 플래그로 레벨 변경"""
    logger.setLevel(getattr(logging, level.upper()))


# 전역 로거 인스턴스
logger = setup_logging()
