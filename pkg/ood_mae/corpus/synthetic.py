"""
절차적 합성 이미지 생성기
임상 데이터 대신 사용하는 '건강' 분포와 분리된 텍스처의 이상 영역
"""

from typing import Tuple

import numpy as np
from scipy import ndimage

# 이상 영역 개수 / 면적 비율 (고정)
BLOB_COUNT = (1, 3)
BLOB_AREA = (0.02, 0.20)

DOMAINS = {'in': 0, 'out': 1}

# 도메인별 건강 조직 팔레트 (기본 색, 그라디언트 세기, 혈관 텍스처 스케일)
HEALTHY_PALETTES = {
    'in': {'base': (0.78, 0.46, 0.40), 'gradient': 0.16, 'vessel_scale': 1 / 28},
    'out': {'base': (0.66, 0.40, 0.50), 'gradient': 0.22, 'vessel_scale': 1 / 18},
}

# 이상 영역 텍스처: 녹황색 계열 + 고주파 잡음
ANOMALY_BASE = (0.55, 0.72, 0.28)
ANOMALY_NOISE = 0.09
# 이상 영역과 건강 영역의 채널 평균 차이(L2) 하한
ANOMALY_COLOUR_MARGIN = 0.1


def _rng(seed: int, domain: str, stream: int) -> np.random.Generator:
    if domain not in DOMAINS:
        raise ValueError(f"알 수 없는 도메인: {domain}")
    return np.random.default_rng([int(seed) % (2 ** 32), DOMAINS[domain], stream])


def _band_limited(rng: np.random.Generator, resolution: int, sigma: float) -> np.ndarray:
    """가우시안 차분으로 대역 제한한 잡음 (표준편차 1로 정규화)"""
    noise = rng.standard_normal((resolution, resolution))
    band = ndimage.gaussian_filter(noise, sigma, mode='wrap') \
        - ndimage.gaussian_filter(noise, 2.0 * sigma, mode='wrap')
    return band / (band.std() + 1e-12)


def synth_healthy(seed: int, resolution: int, domain: str = 'in') -> np.ndarray:
    """
    건강 이미지: 부드러운 저주파 색 그라디언트 + 곡선형 혈관 텍스처

    Args:
        seed: 난수 시드 (같은 시드 -> 동일 이미지)
        resolution: 한 변 픽셀 수
        domain: 'in' (학습 도메인) 또는 'out' (다른 촬영 장비 도메인)

    Returns:
        float32 [3, H, W], 값 범위 [0, 1]
    """
    rng = _rng(seed, domain, 0)
    palette = HEALTHY_PALETTES[domain]

    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) / max(resolution - 1, 1)
    base = np.asarray(palette['base']) + rng.uniform(-0.06, 0.06, size=3)

    theta = rng.uniform(0, 2 * np.pi)
    ramp = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta)
    tint = rng.uniform(-1.0, 1.0, size=3) * palette['gradient']

    # 내시경 조명처럼 중심이 밝고 가장자리가 어두운 비네팅
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    vignette = 1.0 - 0.35 * ((xx - cx) ** 2 + (yy - cy) ** 2)

    img = (base[:, None, None] + tint[:, None, None] * ramp[None]) * vignette[None]

    # 영점 교차 근처를 선으로 만들어 곡선형 텍스처 생성
    field = _band_limited(rng, resolution, sigma=max(resolution * palette['vessel_scale'], 0.8))
    vessels = np.exp(-(field / 0.25) ** 2)
    img = img - 0.10 * vessels[None] * np.asarray([0.2, 0.7, 0.6])[:, None, None]

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _blob_mask(rng: np.random.Generator, resolution: int, area: float) -> np.ndarray:
    """면적 비율 area 근처의 물결 경계 타원"""
    aspect = rng.uniform(0.6, 1.0)
    a = np.sqrt(area * resolution ** 2 / (np.pi * aspect))
    b = aspect * a
    margin = min(a, resolution / 2)
    cx, cy = rng.uniform(margin, resolution - margin, size=2)
    phi = rng.uniform(0, np.pi)
    lobes = int(rng.integers(2, 6))
    wobble_phase = rng.uniform(0, 2 * np.pi)

    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    radius = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    boundary = 1.0 + 0.12 * np.sin(lobes * np.arctan2(v, u) + wobble_phase)
    return radius <= boundary


def _anomaly_texture(rng: np.random.Generator, resolution: int) -> np.ndarray:
    base = np.asarray(ANOMALY_BASE) + rng.uniform(-0.05, 0.05, size=3)
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) / max(resolution - 1, 1)
    shade = 0.08 * np.sin(2 * np.pi * (xx * rng.uniform(1, 3) + yy * rng.uniform(1, 3)))
    noise = ndimage.gaussian_filter(rng.standard_normal((3, resolution, resolution)), (0, 0.6, 0.6))
    noise = noise / (noise.std() + 1e-12) * ANOMALY_NOISE
    return np.clip(base[:, None, None] + shade[None] + noise, 0.0, 1.0)


def synth_anomalous(seed: int, resolution: int, domain: str = 'in') -> Tuple[np.ndarray, np.ndarray]:
    """
    synth_healthy 결과 위에 1~3개의 이상 영역(다른 색 통계, 고주파 텍스처) 합성

    Returns:
        (image float32 [3, H, W], mask uint8 [1, H, W])
        마스크 전경 비율은 [0.02, 0.20] 범위, 마스크 밖은 건강 이미지와 동일
    """
    healthy = synth_healthy(seed, resolution, domain).astype(np.float64)
    rng = _rng(seed, domain, 1)

    mask = None
    for _ in range(50):
        count = int(rng.integers(BLOB_COUNT[0], BLOB_COUNT[1] + 1))
        total = rng.uniform(0.04, 0.16)
        candidate = np.zeros((resolution, resolution), dtype=bool)
        for _ in range(count):
            candidate |= _blob_mask(rng, resolution, total / count * rng.uniform(0.7, 1.3))
        if BLOB_AREA[0] <= candidate.mean() <= BLOB_AREA[1]:
            mask = candidate
            break

    if mask is None:
        # 해상도가 너무 작아 타원이 조건을 못 맞출 때: 중앙 정사각형
        side = max(1, int(round(np.sqrt(0.08) * resolution)))
        start = (resolution - side) // 2
        mask = np.zeros((resolution, resolution), dtype=bool)
        mask[start:start + side, start:start + side] = True

    texture = _anomaly_texture(rng, resolution)
    image = np.where(mask[None], texture, healthy)
    return image.astype(np.float32), mask[None].astype(np.uint8)
