"""
체크포인트 저장/로드
버전 태그가 있는 단일 파일 (ModelConfig + 이름별 파라미터 텐서 + 학습 시드)
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import torch

from ood_mae.exceptions import ArtifactMissing, ConfigError
from ood_mae.model.config import ModelConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'ood-mae-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state_dict: Dict[str, torch.Tensor]
    seed: int
    train_config: Dict = field(default_factory=dict)
    epoch: int = 0

    def to_model(self, device: Union[str, torch.device] = 'cpu'):
        """체크포인트에서 모델 복원 (추론 모드)"""
        from ood_mae.model.mae import MaskedAutoencoder

        model = MaskedAutoencoder(self.model_config.validate())
        model.load_state_dict(self.state_dict)
        return model.to(device).eval()

    @classmethod
    def from_model(cls, model, seed: int, train_config: Optional[Dict] = None, epoch: int = 0) -> 'Checkpoint':
        state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
        return cls(model_config=model.config, state_dict=state, seed=seed,
                   train_config=dict(train_config or {}), epoch=epoch)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'model_config': checkpoint.model_config.to_dict(),
        'state_dict': checkpoint.state_dict,
        'seed': int(checkpoint.seed),
        'train_config': checkpoint.train_config,
        'epoch': int(checkpoint.epoch),
    }
    # 중간에 끊겨도 기존 파일이 깨지지 않도록 임시 파일에 먼저 저장
    tmp = path.with_suffix(path.suffix + '.tmp')
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info(f"✓ 체크포인트 저장: {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"체크포인트 파일이 없습니다: {path}", missing=[str(path)])

    payload = torch.load(path, map_location='cpu', weights_only=False)
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise ConfigError(f"체크포인트 형식이 아닙니다: {path}")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise ConfigError(f"지원하지 않는 체크포인트 버전: {payload.get('version')}")

    return Checkpoint(
        model_config=ModelConfig.from_dict(payload['model_config']),
        state_dict=payload['state_dict'],
        seed=payload['seed'],
        train_config=payload.get('train_config', {}),
        epoch=payload.get('epoch', 0),
    )
