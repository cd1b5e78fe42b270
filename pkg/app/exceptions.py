from typing import Optional


class LabError(Exception):
    """실험실 공통 예외 (exit_code는 CLI 종료 코드로 그대로 사용)"""
    exit_code: int = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# --- 입력/설정 오류 (exit 2) ---

class ParameterError(LabError):
    """파라미터가 허용 범위를 벗어남"""
    exit_code = 2


class DomainError(LabError):
    """함수 정의역 밖의 인자 (예: x <= 0)"""
    exit_code = 2


class RangeError(LabError):
    """효용 값이 U의 치역 밖이라 역변환 불가"""
    exit_code = 2


class CoverageError(LabError):
    """평가 지점이 행사가 격자 범위를 벗어남"""
    exit_code = 2


class ContractViolationError(LabError):
    """오목하지 않은 효용에 쌍대/역한계효용을 요청함"""
    exit_code = 2


class PreconditionError(LabError):
    """실험 전제조건 미충족 (예: 파라미터 제약 불만족)"""
    exit_code = 2


class ConfigError(LabError):
    """설정 파일 또는 유틸리티 서술자 파싱 실패"""
    exit_code = 2


class NonDifferentiableError(LabError):
    """꺾인 점에서 한계효용 요청. 좌/우 기울기를 함께 전달"""
    exit_code = 2

    def __init__(self, detail: str, left_slope: float, right_slope: float):
        super().__init__(detail)
        self.left_slope = left_slope
        self.right_slope = right_slope


class SetValuedError(LabError):
    """포락선 다리 기울기에서 역한계효용이 구간값. 구간 [lower, upper] 를 함께 전달"""
    exit_code = 2

    def __init__(self, detail: str, lower: float, upper: float):
        super().__init__(detail)
        self.lower = lower
        self.upper = upper


# --- 수치 오류 (exit 3) ---

class EvaluationError(LabError):
    """적분 노드나 표본에서 비유한 값 발생"""
    exit_code = 3

    def __init__(self, detail: str, node: Optional[float] = None):
        super().__init__(detail)
        self.node = node


class BracketingError(LabError):
    """구간 양 끝에서 부호 변화 없음"""
    exit_code = 3


class ConvergenceError(LabError):
    """반복 상한 초과"""
    exit_code = 3


class WellposednessError(LabError):
    """기대효용/쌍대 적분 발산 또는 유효 위험회피도 <= 0"""
    exit_code = 3


# --- CLI 오류 ---

class UsageError(LabError):
    """알 수 없는 명령 또는 잘못된 인자"""
    exit_code = 64


class OutputError(LabError):
    """결과 파일 기록 실패"""
    exit_code = 74
