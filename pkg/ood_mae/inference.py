"""
OOD 재구성 및 이상 점수 계산

R = F_dec((F_enc(X; M; r) - μ) / σ)
A = P ⊛ (1/C) Σ_c |R - X|   (P: stride 1, reflect padding 평균 풀링)
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from ood_mae.exceptions import ConfigError, DecodeError, ShapeError
from ood_mae.latent_stats import GRANULARITIES, LatentStats
from ood_mae.model.mae import MaskedAutoencoder, image_tensor, visible_ids_tensor
from ood_mae.patchgrid import derive_seed, sample_mask

logger = logging.getLogger(__name__)

RAW_MAP_MAGIC = b'OODMAP1\n'


@dataclass
class InferenceConfig:
    """추론 설정 (K: 마스크 샘플 수, pool_kernel: 평균 풀링 커널)"""

    masking_ratio: float = 0.35
    num_mask_samples: int = 1
    mask_seed: int = 0
    pool_kernel: int = 16
    stats_mode: str = 'channel'

    def validate(self) -> 'InferenceConfig':
        if not 0.0 <= self.masking_ratio < 1.0:
            raise ConfigError(f"masking_ratio는 [0, 1) 범위여야 합니다: {self.masking_ratio}")
        if self.num_mask_samples < 1:
            raise ConfigError(f"num_mask_samples는 1 이상이어야 합니다: {self.num_mask_samples}")
        if self.pool_kernel < 1:
            raise ConfigError(f"pool_kernel은 1 이상이어야 합니다: {self.pool_kernel}")
        if self.stats_mode not in GRANULARITIES:
            raise ConfigError(f"알 수 없는 stats_mode: {self.stats_mode}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class AnomalyMap:
    """단일 채널 이상 점수 맵 [1, H, W] (유한, 음수 없음)"""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim == 2:
            self.scores = self.scores[None]
        if self.scores.ndim != 3 or self.scores.shape[0] != 1:
            raise ShapeError(f"[1, H, W] 형태가 필요합니다: {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ShapeError("이상 맵에 유한하지 않은 값이 있습니다.")
        if self.scores.size and self.scores.min() < 0:
            raise ShapeError("이상 맵에 음수가 있습니다.")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.scores.shape


def reconstruct_ood(img, params: MaskedAutoencoder, stats: Optional[LatentStats],
                    cfg: InferenceConfig) -> np.ndarray:
    """
    K개의 마스크로 인코딩 -> 표준화 -> 디코딩 후 평균, [0, 1]로 클램프

    Args:
        img: [C, H, W] 입력
        params: 학습된 모델
        stats: ID 잠재 통계 (None이면 표준화 생략)
        cfg: 추론 설정

    Returns:
        float32 [C, H, W]
    """
    cfg.validate()
    model_cfg = params.config
    if stats is not None:
        stats.check_compatible(model_cfg.embed_dim, model_cfg.num_patches)

    x = image_tensor(img, params)
    masks = [sample_mask(model_cfg.num_patches, cfg.masking_ratio, derive_seed(cfg.mask_seed, k))
             for k in range(cfg.num_mask_samples)]
    ids = visible_ids_tensor(masks, device=x.device)
    batch = x.expand(len(masks), -1, -1, -1)

    was_training = params.training
    params.eval()
    with torch.no_grad():
        recon = params(batch, ids, stats=stats)
    params.train(was_training)

    recon = recon.mean(dim=0) if len(masks) > 1 else recon[0]
    return recon.clamp(0.0, 1.0).detach().cpu().numpy().astype(np.float32)


def _pool_same(diff: torch.Tensor, kernel: int) -> torch.Tensor:
    """stride 1 평균 풀링, reflect padding으로 입력과 같은 크기 유지"""
    h, w = diff.shape[-2:]
    kernel = max(1, min(kernel, h, w))
    if kernel == 1:
        return diff
    top = (kernel - 1) // 2
    bottom = kernel - 1 - top
    padded = F.pad(diff, (top, bottom, top, bottom), mode='reflect')
    return F.avg_pool2d(padded, kernel_size=kernel, stride=1)


def anomaly_score(img, recon, cfg: InferenceConfig) -> AnomalyMap:
    """채널 평균 L1 차이 -> 평균 풀링 (img, recon 순서에 대해 대칭)"""
    x = np.asarray(img, dtype=np.float64)
    r = np.asarray(recon, dtype=np.float64)
    if x.shape != r.shape:
        raise ShapeError(f"형태 불일치: {x.shape} vs {r.shape}")
    if x.ndim != 3:
        raise ShapeError(f"[C, H, W] 형태가 필요합니다: {x.shape}")

    diff = torch.from_numpy(np.abs(r - x).mean(axis=0))[None, None]
    pooled = _pool_same(diff, cfg.pool_kernel)[0]
    return AnomalyMap(scores=pooled.numpy())


def normalise_map(amap: AnomalyMap) -> AnomalyMap:
    """이미지별 min-max 정규화 -> [0, 1] (상수 맵은 0)"""
    s = amap.scores
    lo, hi = float(s.min()), float(s.max())
    if hi - lo <= 0:
        return AnomalyMap(scores=np.zeros_like(s))
    return AnomalyMap(scores=np.clip((s - lo) / (hi - lo), 0.0, 1.0))


def image_score(amap: AnomalyMap) -> float:
    """이미지 단위 이상 점수 (맵 평균)"""
    return float(amap.scores.mean())


def infer_image(img, params: MaskedAutoencoder, stats: Optional[LatentStats],
                cfg: InferenceConfig) -> Tuple[np.ndarray, AnomalyMap]:
    """재구성과 (정규화 전) 이상 맵을 함께 반환"""
    recon = reconstruct_ood(img, params, stats, cfg)
    return recon, anomaly_score(img, recon, cfg)


def write_raw_map(amap: AnomalyMap, path: Union[str, Path]) -> Path:
    """
    원시 float 맵 저장
    형식: 매직 b'OODMAP1\\n' + JSON 헤더 한 줄 (shape, dtype) + little-endian float32
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = amap.scores.astype('<f4')
    header = json.dumps({'shape': list(data.shape), 'dtype': 'float32-le'}).encode('utf-8') + b'\n'
    with open(path, 'wb') as f:
        f.write(RAW_MAP_MAGIC)
        f.write(header)
        f.write(data.tobytes(order='C'))
    return path


def read_raw_map(path: Union[str, Path]) -> AnomalyMap:
    with open(path, 'rb') as f:
        if f.readline() != RAW_MAP_MAGIC:
            raise DecodeError(f"원시 맵 파일 형식이 아닙니다: {path}")
        header = json.loads(f.readline().decode('utf-8'))
        if header.get('dtype') != 'float32-le':
            raise DecodeError(f"지원하지 않는 dtype: {header.get('dtype')}")
        shape = tuple(header['shape'])
        data = np.frombuffer(f.read(), dtype='<f4')
    if data.size != int(np.prod(shape)):
        raise DecodeError(f"원시 맵 크기 불일치: {path}")
    return AnomalyMap(scores=data.reshape(shape).astype(np.float64))
