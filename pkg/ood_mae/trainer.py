"""
ID(건강) 학습 루프
모든 패치(보이는/가려진)에 대한 MSE로 MAE를 처음부터 학습
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch
from torch.optim import AdamW
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm
from transformers import get_cosine_schedule_with_warmup

from ood_mae.corpus import DatasetManifest, load_image, synth_healthy
from ood_mae.exceptions import ConfigError, ContractViolation, DivergenceError, ShapeError
from ood_mae.model import (Checkpoint, MaskedAutoencoder, ModelConfig, init_model,
                           save_checkpoint, visible_ids_tensor)
from ood_mae.patchgrid import derive_seed, sample_mask

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """학습 설정 (기본값: 배치 44, lr 1.5e-4, weight decay 5e-2, 가림 비율 35%)"""

    masking_ratio: float = 0.35
    batch_size: int = 44
    learning_rate: float = 1.5e-4
    weight_decay: float = 5e-2
    epochs: int = 100
    seed: int = 0
    warmup_epochs: int = 10
    betas: tuple = (0.9, 0.95)
    device: str = 'cpu'
    num_workers: int = 4

    def validate(self) -> 'TrainConfig':
        if not 0.0 < self.masking_ratio < 1.0:
            raise ConfigError(f"masking_ratio는 (0, 1) 범위여야 합니다: {self.masking_ratio}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs와 batch_size는 양의 정수여야 합니다.")
        if self.warmup_epochs < 0 or self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("warmup_epochs, learning_rate, weight_decay 값이 잘못되었습니다.")
        return self

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['betas'] = list(self.betas)
        return data


def reconstruction_loss(recon, target):
    """
    모든 C*H*W 원소에 대한 제곱 오차 평균 (보이는 패치 포함)

    torch 텐서면 텐서(미분 가능), numpy 배열이면 float 반환
    """
    if tuple(recon.shape) != tuple(target.shape):
        raise ShapeError(f"형태 불일치: {tuple(recon.shape)} vs {tuple(target.shape)}")
    if torch.is_tensor(recon):
        return torch.mean((recon - target) ** 2)
    diff = np.asarray(recon, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff ** 2))


def param_groups(model: torch.nn.Module, weight_decay: float) -> List[Dict]:
    """bias, 정규화 계수, empty 토큰은 weight decay 제외 (위치 임베딩은 buffer라 제외됨)"""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if p.ndim < 2 or name.endswith('.bias') or name == 'mask_token':
            no_decay.append(p)
        else:
            decay.append(p)
    return [
        {'params': decay, 'weight_decay': weight_decay},
        {'params': no_decay, 'weight_decay': 0.0},
    ]


def load_training_images(manifest: DatasetManifest, resolution: int, max_workers: int = 4) -> torch.Tensor:
    """매니페스트 이미지를 병렬 로드 -> [B, C, H, W] float32"""
    paths = [manifest.resolve(e.image_path) for e in manifest.entries]
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        images = list(tqdm(pool.map(lambda p: load_image(p, resolution), paths),
                           total=len(paths), desc="이미지 로드"))
    return torch.from_numpy(np.stack(images))


def check_training_manifest(manifest: DatasetManifest):
    bad = [e.image_path for e in manifest.entries if e.label != 'healthy' or e.split != 'train']
    if bad:
        raise ContractViolation(f"학습 매니페스트에 healthy/train 이외 항목 {len(bad)}개: {bad[:3]}")


class Trainer:
    """
    MAE 학습기

    매 스텝 이미지마다 새 마스크를 뽑아 인코딩 -> 전체 토큰 디코딩 -> 전체 픽셀 MSE
    """

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 run_dir: Union[str, Path, None] = None,
                 checkpoint_name: str = 'checkpoint.pt'):
        self.model_cfg = model_cfg.validate()
        self.train_cfg = train_cfg.validate()
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.checkpoint_path = self.run_dir / checkpoint_name if self.run_dir else None
        self.loss_log_path = self.run_dir / 'loss_log.csv' if self.run_dir else None
        self.history: List[Dict] = []
        self.device = torch.device(train_cfg.device)

    def _log_step(self, row: Dict):
        self.history.append(row)
        if self.loss_log_path is not None:
            first = not self.loss_log_path.exists() or len(self.history) == 1
            pd.DataFrame([row], columns=['epoch', 'step', 'loss', 'lr']).to_csv(
                self.loss_log_path, mode='w' if first else 'a', header=first,
                index=False, lineterminator='\n', float_format='%.10g')

    @staticmethod
    def _state_is_finite(model: MaskedAutoencoder, batch: torch.Tensor, ids: torch.Tensor) -> bool:
        """모든 파라미터가 유한하고 고정 배치 손실도 유한한지"""
        if not all(bool(torch.isfinite(p).all()) for p in model.parameters()):
            return False
        with torch.no_grad():
            return math.isfinite(float(reconstruction_loss(model(batch, ids), batch)))

    def _snapshot(self, model: MaskedAutoencoder, epoch: int) -> Checkpoint:
        ckpt = Checkpoint.from_model(model, seed=self.train_cfg.seed,
                                     train_config=self.train_cfg.to_dict(), epoch=epoch)
        if self.checkpoint_path is not None:
            save_checkpoint(ckpt, self.checkpoint_path)
        return ckpt

    def fit(self, images: torch.Tensor) -> Checkpoint:
        """
        Args:
            images: [B, C, H, W] 건강 학습 이미지

        Returns:
            최종 Checkpoint

        Raises:
            DivergenceError: 손실이 유한하지 않을 때 (직전 정상 체크포인트는 디스크에 유지)
        """
        cfg, tc = self.model_cfg, self.train_cfg
        expected = (cfg.channels, cfg.resolution, cfg.resolution)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise ShapeError(f"학습 이미지 형태 {tuple(images.shape)}가 {expected}와 다릅니다.")
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)

        model = init_model(cfg, tc.seed).to(self.device)
        model.train()

        generator = torch.Generator().manual_seed(tc.seed)
        loader = DataLoader(TensorDataset(images), batch_size=tc.batch_size, shuffle=True,
                            generator=generator, drop_last=False)
        steps_per_epoch = len(loader)
        total_steps = tc.epochs * steps_per_epoch
        warmup_steps = min(tc.warmup_epochs, tc.epochs) * steps_per_epoch

        optimizer = AdamW(param_groups(model, tc.weight_decay), lr=tc.learning_rate, betas=tuple(tc.betas))
        scheduler = get_cosine_schedule_with_warmup(optimizer, num_warmup_steps=warmup_steps,
                                                    num_training_steps=total_steps)

        logger.info(f"\n{'=' * 60}")
        logger.info(f"🧠 학습 시작: {len(images)}개 이미지, {tc.epochs} epoch, {steps_per_epoch} step/epoch")
        logger.info(f"    - masking ratio: {tc.masking_ratio}, lr: {tc.learning_rate}, wd: {tc.weight_decay}")
        logger.info(f"{'=' * 60}")

        # 체크포인트 저장 전 검증용 고정 배치/마스크
        check_batch = images[:tc.batch_size].to(self.device)
        check_ids = visible_ids_tensor(
            [sample_mask(cfg.num_patches, tc.masking_ratio, derive_seed(tc.seed, i))
             for i in range(check_batch.shape[0])], device=self.device)

        last_good = self._snapshot(model, epoch=0)
        step = 0
        for epoch in tqdm(range(1, tc.epochs + 1), desc="학습"):
            epoch_losses = []
            for (batch,) in loader:
                batch = batch.to(self.device)
                masks = [sample_mask(cfg.num_patches, tc.masking_ratio, derive_seed(tc.seed, step, i))
                         for i in range(batch.shape[0])]
                ids = visible_ids_tensor(masks, device=self.device)

                recon = model(batch, ids)
                loss = reconstruction_loss(recon, batch)
                value = float(loss.item())
                if not math.isfinite(value):
                    logger.error(f"✗ 손실 발산 (epoch {epoch}, step {step}): {value}")
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, step {step}",
                        last_good_path=self.checkpoint_path,
                    )

                lr = optimizer.param_groups[0]['lr']
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                scheduler.step()

                self._log_step({'epoch': epoch, 'step': step, 'loss': value, 'lr': lr})
                epoch_losses.append(value)
                step += 1

            mean_loss = float(np.mean(epoch_losses))
            logger.info(f"Epoch {epoch}/{tc.epochs} | Loss: {mean_loss:.6f} | LR: {optimizer.param_groups[0]['lr']:.3e}")
            # 갱신된 가중치가 유한한 손실을 낼 때만 정상 체크포인트로 교체
            if not self._state_is_finite(model, check_batch, check_ids):
                logger.error(f"✗ 손실 발산 (epoch {epoch} 종료 시 가중치): 체크포인트 epoch {last_good.epoch} 유지")
                raise DivergenceError(
                    f"non-finite weights or loss after epoch {epoch}",
                    last_good_path=self.checkpoint_path,
                )
            last_good = self._snapshot(model, epoch=epoch)

        logger.info(f"✓ 학습 완료: 마지막 epoch 평균 손실 {mean_loss:.6f}")
        return last_good

    def epoch_means(self) -> List[float]:
        if not self.history:
            return []
        df = pd.DataFrame(self.history)
        return df.groupby('epoch')['loss'].mean().tolist()


def train(manifest: DatasetManifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
          run_dir: Union[str, Path, None] = None) -> Checkpoint:
    """매니페스트(건강 학습 항목만)로 학습하여 체크포인트 반환"""
    check_training_manifest(manifest)
    images = load_training_images(manifest, model_cfg.resolution, train_cfg.num_workers)
    return Trainer(model_cfg, train_cfg, run_dir=run_dir).fit(images)


@dataclass
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: List[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)


def grad_check(model_cfg: ModelConfig, seed: int, num_params: int,
               step: float = 1e-5,
               zero_head: bool = False,
               zero_image: bool = False,
               param_names: Optional[List[str]] = None,
               masking_ratio: float = 0.35) -> GradCheckReport:
    """
    무작위로 고른 스칼라 파라미터에 대해 해석적 기울기와 중앙 차분 비교 (float64)

    Args:
        model_cfg: 모델 설정 (tiny 권장)
        seed: 초기화/입력/마스크/파라미터 선택 시드
        num_params: 비교할 스칼라 파라미터 수
        step: 중앙 차분 간격
        zero_head: 출력 헤드를 0으로 초기화
        zero_image: 입력을 0 이미지로 사용
        param_names: 선택 대상 파라미터 이름 (None이면 전체)
    """
    model = init_model(model_cfg, seed, zero_head=zero_head).double()
    # 학습 모드: MultiheadAttention fast path 비활성화 (두 계산 경로를 동일하게)
    model.train()

    if zero_image:
        image = np.zeros((model_cfg.channels, model_cfg.resolution, model_cfg.resolution))
    else:
        image = synth_healthy(seed, model_cfg.resolution)
    x = torch.from_numpy(np.asarray(image, dtype=np.float64))[None]
    mask = sample_mask(model_cfg.num_patches, masking_ratio, seed)
    ids = visible_ids_tensor([mask])

    def loss_fn() -> torch.Tensor:
        return reconstruction_loss(model(x, ids), x)

    model.zero_grad()
    loss_fn().backward()

    named = [(n, p) for n, p in model.named_parameters()
             if param_names is None or n in param_names]
    if not named:
        raise ConfigError(f"선택할 파라미터가 없습니다: {param_names}")
    sizes = np.array([p.numel() for _, p in named], dtype=np.float64)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for _ in range(num_params):
        k = int(rng.choice(len(named), p=sizes / sizes.sum()))
        name, p = named[k]
        idx = int(rng.integers(p.numel()))
        flat = p.data.view(-1)
        analytic = float(p.grad.view(-1)[idx]) if p.grad is not None else 0.0

        with torch.no_grad():
            original = float(flat[idx])
            flat[idx] = original + step
            plus = float(loss_fn())
            flat[idx] = original - step
            minus = float(loss_fn())
            flat[idx] = original

        numeric = (plus - minus) / (2 * step)
        denom = max(abs(analytic), abs(numeric), 1e-7)
        report.entries.append(GradCheckEntry(name, idx, analytic, numeric, abs(analytic - numeric) / denom))

    logger.info(f"✓ 기울기 검사: {num_params}개 파라미터, 최대 상대 오차 {report.max_rel_error:.2e}")
    return report
