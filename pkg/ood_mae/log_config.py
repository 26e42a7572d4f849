"""
로깅 설정 모듈
실행 디렉토리 아래 logs/ 에 타임스탬프 로그 파일을 만들고 콘솔에도 출력
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"

_configured_file: Optional[Path] = None


def setup_logging(log_dir: Union[str, Path, None] = None,
                  name: str = "ood_mae",
                  level: int = logging.INFO) -> Optional[Path]:
    """
    루트 로거 설정 (프로세스당 한 번만 파일 핸들러를 붙임)

    Args:
        log_dir: 로그 파일 디렉토리 (None이면 콘솔만 사용)
        name: 로그 파일명 접두어
        level: 로그 레벨

    Returns:
        생성된 로그 파일 경로 또는 None
    """
    global _configured_file

    handlers = [logging.StreamHandler()]
    log_file = None

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_file = log_dir / f"{name}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        handlers.insert(0, logging.FileHandler(log_file, encoding="utf-8"))

    # 이미 같은 파일로 설정된 경우 다시 붙이지 않음
    if _configured_file is not None and log_file is None:
        return _configured_file

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    _configured_file = log_file
    return log_file
