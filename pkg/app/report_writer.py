"""
결과 표 파일 기록: CSV (메타데이터 주석 헤더 + 17 유효숫자) 또는 JSON
"""
import json
import os
from typing import Any, Dict, List, Union

import pandas as pd
from pydantic import BaseModel

from app.exceptions import OutputError
from app.logging_config import logger

FLOAT_FORMAT = "%.17g"


def to_frame(rows: Union[pd.DataFrame, List[Any]], columns: Dict[str, str] = None) -> pd.DataFrame:
    """
    pydantic 모델/딕셔너리 목록을 DataFrame 으로

    Args:
        columns: {원래 필드: 출력 열 이름}. 주어지면 그 순서와 이름만 남김
    """
    if isinstance(rows, pd.DataFrame):
        frame = rows
    else:
        frame = pd.DataFrame([r.model_dump() if isinstance(r, BaseModel) else dict(r) for r in rows])
    if columns:
        frame = frame[list(columns)].rename(columns=columns)
    return frame


def _metadata_lines(metadata: Dict[str, Any]) -> str:
    return "".join(f"# {key}: {json.dumps(value, sort_keys=True, default=str)}\n" for key, value in metadata.items())


def write_table(frame: pd.DataFrame, path: str, fmt: str, metadata: Dict[str, Any]) -> str:
    """
    표 하나를 기록. 같은 입력이면 바이트 단위로 같은 파일을 만든다 (타임스탬프 없음)

    Args:
        frame: 출력 표
        path: 파일 경로 (디렉토리는 필요하면 만듦)
        fmt: "csv" 또는 "json"
        metadata: 설정 에코, 버전, 시드, 적분 오차 추정

    Returns:
        str: 기록한 경로

    Raises:
        OutputError: 디렉토리 생성이나 쓰기 실패
    """
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            if fmt == "csv":
                f.write(_metadata_lines(metadata))
                frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            elif fmt == "json":
                payload = {"metadata": metadata, "rows": frame.to_dict(orient="records")}
                f.write(json.dumps(payload, indent=2, default=str))
                f.write("\n")
            else:
                raise OutputError(f"Unsupported output format '{fmt}' (expected csv or json)")
    except OSError as exc:
        raise OutputError(f"Cannot write output file {path}: {exc.strerror or exc}") from exc

    logger.info(f"Wrote {len(frame)} row(s) to {path}", extra={"format": fmt, "columns": list(frame.columns)})
    return path


def write_report(report: Dict[str, Any], path: str, metadata: Dict[str, Any]) -> str:
    """표가 아닌 JSON 보고서 (validate 명령)"""
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(json.dumps({"metadata": metadata, "report": report}, indent=2, default=str))
            f.write("\n")
    except OSError as exc:
        raise OutputError(f"Cannot write report file {path}: {exc.strerror or exc}") from exc
    logger.info(f"Wrote report to {path}")
    return path
