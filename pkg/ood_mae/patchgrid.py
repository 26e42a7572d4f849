"""
패치 그리드
겹치지 않는 패치 토큰화 / 역변환 / 무작위 마스크 템플릿

패치 순서는 행 우선(row-major), 패치 내부는 (py, px, c) 채널-마지막 순서로 평탄화
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch

from ood_mae.exceptions import ShapeError


@dataclass
class PatchSequence:
    tokens: np.ndarray          # [N, p*p*C]
    patch_size: int
    grid_shape: Tuple[int, int]
    channels: int = 3

    @property
    def num_patches(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]


@dataclass
class MaskTemplate:
    """패치별 가림 여부 (True = 가려짐)"""

    masked: np.ndarray          # bool [N]
    ratio: float
    seed: int

    @property
    def num_patches(self) -> int:
        return int(self.masked.shape[0])

    @property
    def masked_count(self) -> int:
        return int(self.masked.sum())

    @property
    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.masked)

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)


def grid_shape_for(height: int, width: int, patch_size: int) -> Tuple[int, int]:
    if patch_size < 1:
        raise ShapeError(f"patch_size는 양의 정수여야 합니다: {patch_size}")
    if height % patch_size or width % patch_size:
        raise ShapeError(f"해상도 {height}x{width}가 patch_size {patch_size}로 나누어떨어지지 않습니다.")
    return height // patch_size, width // patch_size


def patchify(img: np.ndarray, patch_size: int) -> PatchSequence:
    """[C, H, W] 이미지 -> [N, p*p*C] 토큰"""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"[C, H, W] 형태가 필요합니다: {img.shape}")
    c, h, w = img.shape
    gh, gw = grid_shape_for(h, w, patch_size)
    p = patch_size
    tokens = img.reshape(c, gh, p, gw, p).transpose(1, 3, 2, 4, 0).reshape(gh * gw, p * p * c)
    return PatchSequence(tokens=tokens, patch_size=p, grid_shape=(gh, gw), channels=c)


def unpatchify(seq: PatchSequence) -> np.ndarray:
    """patchify의 정확한 역변환"""
    gh, gw = seq.grid_shape
    p, c = seq.patch_size, seq.channels
    tokens = np.asarray(seq.tokens)
    if tokens.shape != (gh * gw, p * p * c):
        raise ShapeError(f"토큰 형태 {tokens.shape}가 grid {seq.grid_shape}, p={p}, C={c}와 맞지 않습니다.")
    return tokens.reshape(gh, gw, p, p, c).transpose(4, 0, 2, 1, 3).reshape(c, gh * p, gw * p)


def patchify_tensor(imgs: torch.Tensor, patch_size: int) -> torch.Tensor:
    """배치 버전: [B, C, H, W] -> [B, N, p*p*C] (patchify와 같은 순서)"""
    b, c, h, w = imgs.shape
    gh, gw = grid_shape_for(h, w, patch_size)
    p = patch_size
    x = imgs.reshape(b, c, gh, p, gw, p)
    x = torch.einsum('bcypxq->byxpqc', x)
    return x.reshape(b, gh * gw, p * p * c)


def unpatchify_tensor(tokens: torch.Tensor, patch_size: int, grid_shape: Tuple[int, int],
                      channels: int = 3) -> torch.Tensor:
    """배치 버전: [B, N, p*p*C] -> [B, C, H, W]"""
    b, n, d = tokens.shape
    gh, gw = grid_shape
    p = patch_size
    if n != gh * gw or d != p * p * channels:
        raise ShapeError(f"토큰 형태 {tuple(tokens.shape)}가 grid {grid_shape}, p={p}와 맞지 않습니다.")
    x = tokens.reshape(b, gh, gw, p, p, channels)
    x = torch.einsum('byxpqc->bcypxq', x)
    return x.reshape(b, channels, gh * p, gw * p)


def masked_count_for(num_patches: int, ratio: float) -> int:
    """round-half-away-from-zero(r * N)"""
    return int(np.floor(ratio * num_patches + 0.5))


def derive_seed(*keys: int) -> int:
    """여러 정수 키로부터 결정적인 32-bit 시드 생성"""
    seq = np.random.SeedSequence([int(k) % (2 ** 32) for k in keys])
    return int(seq.generate_state(1)[0])


def sample_mask(num_patches: int, ratio: float, seed: int) -> MaskTemplate:
    """
    비복원 균등 추출로 정확히 round(r*N)개의 패치를 가림

    Args:
        num_patches: 전체 패치 수 N
        ratio: 가림 비율 r, 0 <= r < 1
        seed: 난수 시드
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"masking ratio는 [0, 1) 범위여야 합니다: {ratio}")
    if num_patches < 1:
        raise ShapeError(f"num_patches는 양의 정수여야 합니다: {num_patches}")

    count = masked_count_for(num_patches, ratio)
    rng = np.random.default_rng(int(seed) % (2 ** 32))
    masked = np.zeros(num_patches, dtype=bool)
    masked[rng.permutation(num_patches)[:count]] = True
    return MaskTemplate(masked=masked, ratio=ratio, seed=seed)
