"""
모델 설정 및 프리셋 팩토리
"""

from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, List

from ood_mae.exceptions import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """MAE 인코더/디코더 크기 설정"""

    patch_size: int = 8
    embed_dim: int = 64
    encoder_depth: int = 4
    encoder_heads: int = 4
    decoder_dim: int = 32
    decoder_depth: int = 2
    decoder_heads: int = 4
    resolution: int = 64
    channels: int = 3
    mlp_ratio: float = 4.0

    @property
    def grid_shape(self):
        return (self.resolution // self.patch_size, self.resolution // self.patch_size)

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid_shape
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def validate(self) -> 'ModelConfig':
        """불변 조건 검사 (위반 시 ConfigError)"""
        for f in fields(self):
            value = getattr(self, f.name)
            if value <= 0:
                raise ConfigError(f"{f.name}는 양수여야 합니다: {value}")
        if self.embed_dim % self.encoder_heads:
            raise ConfigError(f"embed_dim {self.embed_dim}이 encoder_heads {self.encoder_heads}로 나누어떨어지지 않습니다.")
        if self.decoder_dim % self.decoder_heads:
            raise ConfigError(f"decoder_dim {self.decoder_dim}이 decoder_heads {self.decoder_heads}로 나누어떨어지지 않습니다.")
        if self.resolution % self.patch_size:
            raise ConfigError(f"resolution {self.resolution}이 patch_size {self.patch_size}로 나누어떨어지지 않습니다.")
        # 사인/코사인 2D 위치 임베딩은 차원이 4의 배수여야 함
        if self.embed_dim % 4 or self.decoder_dim % 4:
            raise ConfigError("embed_dim과 decoder_dim은 4의 배수여야 합니다.")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"알 수 없는 모델 설정 키: {sorted(unknown)}")
        return cls(**data)


class ModelPresets:
    """
    사전 정의된 모델 크기
    tiny: 데스크 스케일 기본값, base: ViT-Base/16 인코더 + 표준 MAE 디코더
    """

    PRESETS = {
        'tiny': ModelConfig(
            patch_size=8,
            embed_dim=64,
            encoder_depth=4,
            encoder_heads=4,
            decoder_dim=32,
            decoder_depth=2,
            decoder_heads=4,
            resolution=64,
        ),
        'base': ModelConfig(
            patch_size=16,
            embed_dim=768,
            encoder_depth=12,
            encoder_heads=12,
            decoder_dim=512,
            decoder_depth=8,
            decoder_heads=16,
            resolution=224,
        ),
    }

    @staticmethod
    def create(name: str, **overrides) -> ModelConfig:
        """
        프리셋 설정 생성

        Args:
            name: 프리셋 이름 ('tiny', 'base')
            overrides: 덮어쓸 필드 (예: resolution=32)
        """
        config = ModelPresets.PRESETS.get(name)
        if config is None:
            raise ConfigError(f"알 수 없는 프리셋: {name} (사용 가능: {ModelPresets.list_available()})")
        return replace(config, **overrides).validate()

    @staticmethod
    def list_available() -> List[str]:
        return list(ModelPresets.PRESETS.keys())
