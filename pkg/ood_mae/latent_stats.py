"""
ID 잠재 통계 (μ, σ) 누적 및 표준화

누적은 (count, mean, M2) 부분합을 병합 가능한 단일 패스 방식으로 계산
표준편차는 모집단(biased) 규약
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import torch

from ood_mae.exceptions import ArtifactMissing, ConfigError, EmptyStream, ShapeError
from ood_mae.model.mae import LatentTokens

logger = logging.getLogger(__name__)

GRANULARITIES = ('channel', 'position-channel')
DEFAULT_EPSILON = 1e-6
STATS_VERSION = 1


def _merge(n_a, mean_a, m2_a, n_b, mean_b, m2_b):
    """두 부분 누적기 병합 (결합/교환 법칙 성립)"""
    n = n_a + n_b
    safe = np.where(n > 0, n, 1)
    delta = mean_b - mean_a
    mean = mean_a + delta * (n_b / safe)
    m2 = m2_a + m2_b + delta ** 2 * (n_a * n_b / safe)
    return n, mean, m2


class StatsAccumulator:
    """
    잠재 토큰 스트림의 부분 누적기

    channel 누적은 항상 유지하고, position-channel 모드에서는 위치별 누적도 함께 유지
    (관측되지 않은 위치는 finalize 시 channel 값으로 대체)
    """

    def __init__(self, embed_dim: int, granularity: str = 'channel', num_patches: Optional[int] = None):
        if granularity not in GRANULARITIES:
            raise ConfigError(f"알 수 없는 granularity: {granularity}")
        if granularity == 'position-channel' and not num_patches:
            raise ConfigError("position-channel 모드에는 num_patches가 필요합니다.")
        self.embed_dim = embed_dim
        self.granularity = granularity
        self.num_patches = num_patches

        self.count = np.zeros((), dtype=np.float64)
        self.mean = np.zeros(embed_dim, dtype=np.float64)
        self.m2 = np.zeros(embed_dim, dtype=np.float64)
        if granularity == 'position-channel':
            self.pos_count = np.zeros((num_patches, 1), dtype=np.float64)
            self.pos_mean = np.zeros((num_patches, embed_dim), dtype=np.float64)
            self.pos_m2 = np.zeros((num_patches, embed_dim), dtype=np.float64)

    def update(self, latent: LatentTokens) -> 'StatsAccumulator':
        z = latent.numpy()
        if z.shape[-1] != self.embed_dim:
            raise ShapeError(f"잠재 차원 {z.shape[-1]} != {self.embed_dim}")
        if z.shape[0] == 0:
            return self

        n_b = np.float64(z.shape[0])
        mean_b = z.mean(axis=0)
        m2_b = ((z - mean_b) ** 2).sum(axis=0)
        self.count, self.mean, self.m2 = _merge(self.count, self.mean, self.m2, n_b, mean_b, m2_b)

        if self.granularity == 'position-channel':
            idx = latent.visible_indices
            if idx.max() >= self.num_patches:
                raise ShapeError(f"위치 인덱스 {idx.max()}가 num_patches {self.num_patches} 범위를 벗어납니다.")
            # 한 이미지 안에서 위치는 중복되지 않으므로 위치별 단일 샘플 병합
            zeros = np.zeros_like(z)
            n, mean, m2 = _merge(self.pos_count[idx], self.pos_mean[idx], self.pos_m2[idx],
                                 np.ones((len(idx), 1)), z, zeros)
            self.pos_count[idx], self.pos_mean[idx], self.pos_m2[idx] = n, mean, m2
        return self

    def merge(self, other: 'StatsAccumulator') -> 'StatsAccumulator':
        """다른 부분 누적기와 병합한 새 누적기 반환"""
        if (other.embed_dim, other.granularity, other.num_patches) != \
                (self.embed_dim, self.granularity, self.num_patches):
            raise ShapeError("병합할 누적기의 설정이 다릅니다.")
        out = StatsAccumulator(self.embed_dim, self.granularity, self.num_patches)
        out.count, out.mean, out.m2 = _merge(self.count, self.mean, self.m2,
                                             other.count, other.mean, other.m2)
        if self.granularity == 'position-channel':
            out.pos_count, out.pos_mean, out.pos_m2 = _merge(
                self.pos_count, self.pos_mean, self.pos_m2,
                other.pos_count, other.pos_mean, other.pos_m2)
        return out

    def finalize(self, epsilon: float = DEFAULT_EPSILON) -> 'LatentStats':
        if self.count <= 0:
            raise EmptyStream("잠재 토큰 스트림이 비어 있습니다.")

        mean = self.mean.copy()
        std = np.sqrt(self.m2 / self.count)
        if self.granularity == 'position-channel':
            seen = self.pos_count[:, 0] > 0
            pos_mean = np.where(seen[:, None], self.pos_mean, mean[None])
            pos_std = np.where(seen[:, None],
                               np.sqrt(self.pos_m2 / np.where(seen, self.pos_count[:, 0], 1)[:, None]),
                               std[None])
            if not seen.all():
                logger.warning(f"⚠ 관측되지 않은 위치 {int((~seen).sum())}개: channel 통계로 대체")
            mean, std = pos_mean, pos_std

        clamped = std < epsilon
        if clamped.any():
            logger.warning(f"⚠ 분산이 0에 가까운 채널 {int(clamped.sum())}개: σ를 {epsilon}로 고정")
            std = np.maximum(std, epsilon)

        return LatentStats(mean=mean, std=std, granularity=self.granularity,
                           count=int(self.count), epsilon=epsilon)


@dataclass
class LatentStats:
    """
    ID 잠재 통계
    channel: μ, σ 형태 [embed_dim] / position-channel: [N, embed_dim]
    """

    mean: np.ndarray
    std: np.ndarray
    granularity: str = 'channel'
    count: int = 1
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"알 수 없는 granularity: {self.granularity}")
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"μ {self.mean.shape}와 σ {self.std.shape} 형태가 다릅니다.")
        expected_ndim = 1 if self.granularity == 'channel' else 2
        if self.mean.ndim != expected_ndim:
            raise ShapeError(f"{self.granularity} 통계는 {expected_ndim}차원이어야 합니다: {self.mean.shape}")
        if np.any(self.std < 0):
            raise ShapeError("σ는 음수일 수 없습니다.")

    @property
    def embed_dim(self) -> int:
        return int(self.mean.shape[-1])

    @property
    def divisor(self) -> np.ndarray:
        return np.maximum(self.std, self.epsilon)

    def _select(self, values: np.ndarray, indices: np.ndarray) -> np.ndarray:
        if self.granularity == 'channel':
            return values
        if indices.size and indices.max() >= values.shape[0]:
            raise ShapeError(f"위치 인덱스 {indices.max()}가 통계 위치 수 {values.shape[0]}를 벗어납니다.")
        return values[indices]

    def check_compatible(self, embed_dim: int, num_patches: Optional[int] = None):
        if self.embed_dim != embed_dim:
            raise ShapeError(f"통계 차원 {self.embed_dim} != 모델 embed_dim {embed_dim}")
        if self.granularity == 'position-channel' and num_patches is not None \
                and self.mean.shape[0] != num_patches:
            raise ShapeError(f"통계 위치 수 {self.mean.shape[0]} != 모델 패치 수 {num_patches}")

    def standardise_tensor(self, z: torch.Tensor, visible_ids: torch.Tensor) -> torch.Tensor:
        """모델 내부용 배치 표준화: z [B, N_vis, D], visible_ids [B, N_vis]"""
        if z.shape[-1] != self.embed_dim:
            raise ShapeError(f"잠재 차원 {z.shape[-1]} != 통계 차원 {self.embed_dim}")
        mu = torch.as_tensor(self.mean, dtype=z.dtype, device=z.device)
        sigma = torch.as_tensor(self.divisor, dtype=z.dtype, device=z.device)
        if self.granularity == 'position-channel':
            if int(visible_ids.max()) >= mu.shape[0]:
                raise ShapeError("위치 인덱스가 통계 범위를 벗어납니다.")
            mu, sigma = mu[visible_ids], sigma[visible_ids]
        return (z - mu) / sigma


def accumulate_stats(latent_stream: Iterable[LatentTokens], granularity: str = 'channel',
                     num_patches: Optional[int] = None,
                     epsilon: float = DEFAULT_EPSILON) -> LatentStats:
    """
    잠재 토큰 스트림에서 μ, σ 계산 (단일 패스)

    Args:
        latent_stream: 같은 학습 모델에서 나온 LatentTokens 시퀀스
        granularity: 'channel' 또는 'position-channel'
        num_patches: position-channel 모드의 위치 수 (None이면 관측된 최대 인덱스 + 1)

    Raises:
        EmptyStream: 스트림이 비어 있을 때
    """
    latents = list(latent_stream) if granularity == 'position-channel' and num_patches is None \
        else latent_stream
    if granularity == 'position-channel' and num_patches is None:
        if not latents:
            raise EmptyStream("잠재 토큰 스트림이 비어 있습니다.")
        num_patches = int(max(l.visible_indices.max(initial=-1) for l in latents)) + 1

    acc = None
    for latent in latents:
        if acc is None:
            acc = StatsAccumulator(int(latent.tokens.shape[-1]), granularity, num_patches)
        acc.update(latent)
    if acc is None:
        raise EmptyStream("잠재 토큰 스트림이 비어 있습니다.")
    return acc.finalize(epsilon)


def standardise(latent: LatentTokens, stats: LatentStats) -> LatentTokens:
    """Z̃ = (Z - μ) / max(σ, ε), visible_indices 유지"""
    if latent.tokens.shape[-1] != stats.embed_dim:
        raise ShapeError(f"잠재 차원 {latent.tokens.shape[-1]} != 통계 차원 {stats.embed_dim}")
    mu = stats._select(stats.mean, latent.visible_indices)
    sigma = stats._select(stats.divisor, latent.visible_indices)
    z = latent.tokens
    out = (z - torch.as_tensor(mu, dtype=z.dtype, device=z.device)) \
        / torch.as_tensor(sigma, dtype=z.dtype, device=z.device)
    return LatentTokens(tokens=out, visible_indices=latent.visible_indices.copy())


def destandardise(latent: LatentTokens, stats: LatentStats) -> LatentTokens:
    """standardise의 역변환"""
    mu = stats._select(stats.mean, latent.visible_indices)
    sigma = stats._select(stats.divisor, latent.visible_indices)
    z = latent.tokens
    out = z * torch.as_tensor(sigma, dtype=z.dtype, device=z.device) \
        + torch.as_tensor(mu, dtype=z.dtype, device=z.device)
    return LatentTokens(tokens=out, visible_indices=latent.visible_indices.copy())


def identity_stats(embed_dim: int, granularity: str = 'channel',
                   num_patches: Optional[int] = None) -> LatentStats:
    """μ = 0, σ = 1 (표준화 생략과 동일)"""
    shape = (embed_dim,) if granularity == 'channel' else (num_patches, embed_dim)
    return LatentStats(mean=np.zeros(shape), std=np.ones(shape), granularity=granularity, count=1)


def save_stats(stats: LatentStats, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        np.savez(f, version=np.int64(STATS_VERSION), granularity=np.array(stats.granularity),
                 mean=stats.mean, std=stats.std, count=np.int64(stats.count),
                 epsilon=np.float64(stats.epsilon))
    logger.info(f"✓ 잠재 통계 저장: {path} ({stats.granularity}, {stats.mean.shape})")
    return path


def load_stats(path: Union[str, Path]) -> LatentStats:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"통계 파일이 없습니다: {path}", missing=[str(path)])
    with np.load(path, allow_pickle=False) as data:
        if int(data['version']) != STATS_VERSION:
            raise ConfigError(f"지원하지 않는 통계 파일 버전: {int(data['version'])}")
        return LatentStats(mean=data['mean'], std=data['std'], granularity=str(data['granularity']),
                           count=int(data['count']), epsilon=float(data['epsilon']))
