"""
이미지 입출력
8-bit PNG <-> [C, H, W] float32 배열 (값 범위 [0, 1])
"""

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

from ood_mae.exceptions import DecodeError, ShapeError

PathLike = Union[str, Path]


def load_image(path: PathLike, resolution: int) -> np.ndarray:
    """
    RGB 이미지 로드 후 resolution x resolution 으로 bilinear 리사이즈

    Returns:
        float32 배열 [3, resolution, resolution], 값 범위 [0, 1]
    """
    if resolution < 1:
        raise ShapeError(f"resolution은 양의 정수여야 합니다: {resolution}")
    try:
        with PILImage.open(path) as img:
            img = img.convert('RGB')
            if img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), PILImage.BILINEAR)
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise DecodeError(f"이미지 디코딩 실패: {path} ({e})") from e

    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def to_uint8(data: np.ndarray) -> np.ndarray:
    """[0,1] 실수 배열 -> 반올림한 8-bit"""
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(data: np.ndarray, path: PathLike) -> Path:
    """[3, H, W] 이미지를 8-bit RGB PNG로 저장"""
    if data.ndim != 3 or data.shape[0] != 3:
        raise ShapeError(f"[3, H, W] 형태가 필요합니다: {data.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(data).transpose(1, 2, 0), mode='RGB').save(path)
    return path


def save_gray(data: np.ndarray, path: PathLike) -> Path:
    """[1, H, W] 또는 [H, W] 단일 채널 맵을 8-bit 그레이스케일 PNG로 저장"""
    if data.ndim == 3:
        data = data[0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(data), mode='L').save(path)
    return path


def save_mask(mask: np.ndarray, path: PathLike) -> Path:
    """이진 마스크 저장 (0 / 255)"""
    return save_gray((np.asarray(mask) > 0).astype(np.float32), path)


def load_gray(path: PathLike) -> np.ndarray:
    """그레이스케일 PNG를 [1, H, W] float32 ([0,1])로 로드"""
    try:
        with PILImage.open(path) as img:
            arr = np.asarray(img.convert('L'), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise DecodeError(f"맵 디코딩 실패: {path} ({e})") from e
    return (arr.astype(np.float32) / 255.0)[None]


def load_mask(path: PathLike, resolution: int) -> np.ndarray:
    """GT 마스크 로드 (nearest 리사이즈) -> [1, H, W] uint8 {0, 1}"""
    try:
        with PILImage.open(path) as img:
            img = img.convert('L')
            if img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), PILImage.NEAREST)
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise DecodeError(f"마스크 디코딩 실패: {path} ({e})") from e
    return (arr > 127).astype(np.uint8)[None]
