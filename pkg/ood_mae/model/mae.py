"""
마스크드 오토인코더 (MAE)
보이는 패치만 처리하는 트랜스포머 인코더 + 전체 토큰을 받는 경량 디코더
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from ood_mae.exceptions import ConfigError, ShapeError
from ood_mae.model.config import ModelConfig
from ood_mae.patchgrid import MaskTemplate, patchify_tensor, unpatchify_tensor

logger = logging.getLogger(__name__)

INIT_STD = 0.02


def get_1d_sincos_pos_embed(embed_dim: int, pos: np.ndarray) -> np.ndarray:
    omega = np.arange(embed_dim // 2, dtype=np.float64) / (embed_dim / 2.0)
    omega = 1.0 / 10000 ** omega
    out = np.einsum('m,d->md', pos.reshape(-1).astype(np.float64), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def get_2d_sincos_pos_embed(embed_dim: int, grid_shape) -> np.ndarray:
    """고정 2D 사인/코사인 위치 임베딩 [gh*gw, embed_dim] (행 우선 순서)"""
    gh, gw = grid_shape
    grid_w, grid_h = np.meshgrid(np.arange(gw, dtype=np.float64), np.arange(gh, dtype=np.float64))
    emb_h = get_1d_sincos_pos_embed(embed_dim // 2, grid_h)
    emb_w = get_1d_sincos_pos_embed(embed_dim // 2, grid_w)
    return np.concatenate([emb_h, emb_w], axis=1)


class Block(nn.Module):
    """Pre-norm 트랜스포머 블록 (GELU MLP)"""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class MaskedAutoencoder(nn.Module):
    """
    MAE 본체

    - patch_embed: 평탄화한 패치 -> embed_dim 선형 사상
    - pos_embed / decoder_pos_embed: 고정 사인/코사인 (buffer)
    - mask_token: 가려진 모든 위치에 공유되는 학습형 'empty' 벡터
    - decoder_pred: 토큰별 p*p*C 픽셀 예측
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n, d, dd = config.num_patches, config.embed_dim, config.decoder_dim

        # 인코더
        self.patch_embed = nn.Linear(config.patch_dim, d)
        self.register_buffer('pos_embed', torch.zeros(1, n, d))
        self.blocks = nn.ModuleList([
            Block(d, config.encoder_heads, config.mlp_ratio) for _ in range(config.encoder_depth)
        ])
        self.norm = nn.LayerNorm(d, eps=1e-6)

        # 디코더
        self.decoder_embed = nn.Linear(d, dd)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dd))
        self.register_buffer('decoder_pos_embed', torch.zeros(1, n, dd))
        self.decoder_blocks = nn.ModuleList([
            Block(dd, config.decoder_heads, config.mlp_ratio) for _ in range(config.decoder_depth)
        ])
        self.decoder_norm = nn.LayerNorm(dd, eps=1e-6)
        self.decoder_pred = nn.Linear(dd, config.patch_dim)

    def initialize_weights(self, zero_head: bool = False):
        """가중치: truncated normal(std 0.02), bias 0, 위치 임베딩: 고정 사인/코사인"""
        grid = self.config.grid_shape
        self.pos_embed.copy_(torch.from_numpy(
            get_2d_sincos_pos_embed(self.config.embed_dim, grid)).float()[None])
        self.decoder_pos_embed.copy_(torch.from_numpy(
            get_2d_sincos_pos_embed(self.config.decoder_dim, grid)).float()[None])

        nn.init.trunc_normal_(self.mask_token, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        self.apply(self._init_weights)

        if zero_head:
            nn.init.zeros_(self.decoder_pred.weight)
            nn.init.zeros_(self.decoder_pred.bias)

    @staticmethod
    def _init_weights(m: nn.Module):
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.MultiheadAttention):
            nn.init.trunc_normal_(m.in_proj_weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
            nn.init.zeros_(m.in_proj_bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)

    def forward_encoder(self, imgs: torch.Tensor, visible_ids: torch.Tensor) -> torch.Tensor:
        """
        Args:
            imgs: [B, C, H, W]
            visible_ids: [B, N_vis] 오름차순 보이는 패치 인덱스

        Returns:
            잠재 토큰 Z [B, N_vis, embed_dim]
        """
        x = self.patch_embed(patchify_tensor(imgs, self.config.patch_size)) + self.pos_embed
        # 토큰별 선형 사상 후에 선택하므로 가려진 패치는 Z에 영향 없음
        x = torch.gather(x, 1, visible_ids[..., None].expand(-1, -1, x.shape[-1]))
        if x.shape[1] > 0:
            for blk in self.blocks:
                x = blk(x)
        return self.norm(x)

    def forward_decoder(self, latent: torch.Tensor, visible_ids: torch.Tensor) -> torch.Tensor:
        """
        Args:
            latent: [B, N_vis, embed_dim] (표준화된 Z 가능)
            visible_ids: [B, N_vis]

        Returns:
            재구성 이미지 R [B, C, H, W]
        """
        x = self.decoder_embed(latent)
        b, dd = x.shape[0], x.shape[-1]
        full = self.mask_token.to(x.dtype).expand(b, self.config.num_patches, dd)
        full = full.scatter(1, visible_ids[..., None].expand(-1, -1, dd), x)
        full = full + self.decoder_pos_embed

        for blk in self.decoder_blocks:
            full = blk(full)
        tokens = self.decoder_pred(self.decoder_norm(full))
        return unpatchify_tensor(tokens, self.config.patch_size, self.config.grid_shape,
                                 self.config.channels)

    def forward(self, imgs: torch.Tensor, visible_ids: torch.Tensor, stats=None) -> torch.Tensor:
        latent = self.forward_encoder(imgs, visible_ids)
        if stats is not None:
            latent = stats.standardise_tensor(latent, visible_ids)
        return self.forward_decoder(latent, visible_ids)


@dataclass
class LatentTokens:
    """보이는 토큰 임베딩 Z [N_vis, embed_dim] 과 해당 그리드 인덱스"""

    tokens: torch.Tensor
    visible_indices: np.ndarray

    def __post_init__(self):
        self.visible_indices = np.asarray(self.visible_indices, dtype=np.int64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != self.visible_indices.shape[0]:
            raise ShapeError(f"토큰 {tuple(self.tokens.shape)}과 인덱스 {self.visible_indices.shape} 불일치")
        if np.any(np.diff(self.visible_indices) <= 0):
            raise ShapeError("visible_indices는 순증가해야 합니다.")

    def numpy(self) -> np.ndarray:
        return self.tokens.detach().cpu().numpy().astype(np.float64)


def init_model(config: ModelConfig, seed: int, zero_head: bool = False) -> MaskedAutoencoder:
    """
    시드 고정 초기화 (같은 config, seed -> 동일 파라미터)

    Raises:
        ConfigError: 잘못된 설정
    """
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"ModelConfig가 필요합니다: {type(config)}")
    config.validate()

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MaskedAutoencoder(config)
        with torch.no_grad():
            model.initialize_weights(zero_head=zero_head)

    logger.info(f"✓ 모델 초기화: {count_parameters(model):,}개 파라미터 (seed={seed})")
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def visible_ids_tensor(masks: Sequence[MaskTemplate], device=None) -> torch.Tensor:
    """마스크 목록 -> [B, N_vis] 인덱스 텐서 (모든 마스크의 가림 개수가 같아야 함)"""
    ids = [m.visible_indices for m in masks]
    if len({len(i) for i in ids}) != 1:
        raise ShapeError("배치 내 마스크의 보이는 패치 수가 서로 다릅니다.")
    return torch.as_tensor(np.stack(ids), dtype=torch.long, device=device)


def _param_ref(params: MaskedAutoencoder) -> torch.Tensor:
    return next(params.parameters())


def image_tensor(img, params: MaskedAutoencoder) -> torch.Tensor:
    """[C, H, W] 배열/텐서 -> 모델 dtype/device 의 [1, C, H, W]"""
    ref = _param_ref(params)
    x = torch.as_tensor(np.asarray(img) if not torch.is_tensor(img) else img)
    cfg = params.config
    expected = (cfg.channels, cfg.resolution, cfg.resolution)
    if tuple(x.shape) != expected:
        raise ShapeError(f"이미지 형태 {tuple(x.shape)}가 모델 입력 {expected}와 다릅니다.")
    return x.to(device=ref.device, dtype=ref.dtype)[None]


def _check_mask(mask: MaskTemplate, params: MaskedAutoencoder):
    if mask.num_patches != params.config.num_patches:
        raise ShapeError(f"마스크 패치 수 {mask.num_patches} != 모델 패치 수 {params.config.num_patches}")


def encode(img, mask: MaskTemplate, params: MaskedAutoencoder) -> LatentTokens:
    """보이는 패치만 인코딩하여 Z 반환"""
    _check_mask(mask, params)
    x = image_tensor(img, params)
    ids = visible_ids_tensor([mask], device=x.device)
    with torch.no_grad():
        z = params.forward_encoder(x, ids)[0]
    return LatentTokens(tokens=z, visible_indices=mask.visible_indices)


def decode(latent: LatentTokens, mask: MaskTemplate, params: MaskedAutoencoder) -> np.ndarray:
    """전체 토큰(보이는 토큰 + empty 토큰)을 디코딩하여 R [C, H, W] 반환"""
    _check_mask(mask, params)
    if not np.array_equal(latent.visible_indices, mask.visible_indices):
        raise ShapeError("latent.visible_indices가 마스크와 일치하지 않습니다.")
    if latent.tokens.shape[-1] != params.config.embed_dim:
        raise ShapeError(f"잠재 차원 {latent.tokens.shape[-1]} != embed_dim {params.config.embed_dim}")

    ref = _param_ref(params)
    z = latent.tokens.to(device=ref.device, dtype=ref.dtype)[None]
    ids = visible_ids_tensor([mask], device=ref.device)
    with torch.no_grad():
        recon = params.forward_decoder(z, ids)[0]
    return recon.detach().cpu().numpy()
