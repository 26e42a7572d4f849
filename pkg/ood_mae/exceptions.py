"""
예외 정의
CLI 종료 코드: 0 성공, 2 계약 위반, 3 입출력 오류
"""

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_IO = 3


class OodMaeError(Exception):
    """패키지 공통 부모 예외"""

    exit_code = EXIT_CONTRACT


class EmptyCorpus(OodMaeError):
    """이미지가 하나도 없는 코퍼스"""


class DecodeError(OodMaeError, IOError):
    """8-bit RGB로 디코딩할 수 없는 이미지 파일"""

    exit_code = EXIT_IO


class ShapeError(OodMaeError, ValueError):
    """배열/텐서 형태 불일치"""


class ConfigError(OodMaeError, ValueError):
    """잘못된 설정값"""


class ContractViolation(OodMaeError):
    """입력 계약 위반 (예: 학습 매니페스트에 이상 샘플 포함)"""


class DivergenceError(OodMaeError):
    """학습 손실이 유한하지 않음"""

    def __init__(self, message: str, last_good_path=None):
        super().__init__(message)
        self.last_good_path = last_good_path


class EmptyStream(OodMaeError):
    """잠재 토큰 스트림이 비어 있음"""


class ArtifactMissing(OodMaeError, IOError):
    """체크포인트, 통계 파일, 이상 맵 등 산출물 누락"""

    exit_code = EXIT_IO

    def __init__(self, message: str, missing=None):
        super().__init__(message)
        self.missing = list(missing or [])


def exit_code_for(error: BaseException) -> int:
    """예외를 CLI 종료 코드로 변환"""
    if isinstance(error, OodMaeError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_CONTRACT
