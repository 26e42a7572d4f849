"""
산출물 저장 모듈
이상 맵 PNG, 원시 맵, 재구성 비교 이미지, 절제 실험 그래프 저장
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ood_mae.corpus.image_io import save_gray, save_image  # noqa: E402
from ood_mae.inference import AnomalyMap, normalise_map, write_raw_map  # noqa: E402

logger = logging.getLogger('ArtifactSaver')

MAP_SUFFIX = '.png'
RAW_SUFFIX = '.oodmap'

PLOT_STYLE = {
    'figure.dpi': 100,
    'axes.grid': True,
    'grid.alpha': 0.3,
    'font.size': 9,
}


class ArtifactSaver:
    """추론 결과를 run_dir 아래에 저장"""

    def __init__(self, base_dir: Union[str, Path], save_raw: bool = False, save_recon: bool = False):
        """
        Args:
            base_dir: 저장 기본 경로 (maps/, raw/, recon/ 하위 디렉토리 생성)
            save_raw: 정규화 전 원시 맵 저장 여부
            save_recon: 입력 | 재구성 | 맵 비교 이미지 저장 여부
        """
        self.base_dir = Path(base_dir)
        self.maps_dir = self.base_dir / 'maps'
        self.raw_dir = self.base_dir / 'raw'
        self.recon_dir = self.base_dir / 'recon'
        self.save_raw = save_raw
        self.save_recon = save_recon
        self.saved = 0

        self.maps_dir.mkdir(parents=True, exist_ok=True)
        if save_raw:
            self.raw_dir.mkdir(parents=True, exist_ok=True)
        if save_recon:
            self.recon_dir.mkdir(parents=True, exist_ok=True)

    def map_path(self, image_id: str) -> Path:
        return self.maps_dir / f"{image_id}{MAP_SUFFIX}"

    def save_result(self, image_id: str, img: np.ndarray, recon: np.ndarray, amap: AnomalyMap) -> Path:
        """
        이미지 하나의 결과 저장

        PNG 픽셀 값 = round(255 * 정규화 점수)

        Returns:
            저장된 맵 PNG 경로
        """
        normalised = normalise_map(amap)
        path = save_gray(normalised.scores, self.map_path(image_id))

        if self.save_raw:
            write_raw_map(amap, self.raw_dir / f"{image_id}{RAW_SUFFIX}")
        if self.save_recon:
            strip = np.concatenate([img, recon, np.repeat(normalised.scores, 3, axis=0)], axis=2)
            save_image(strip, self.recon_dir / f"{image_id}{MAP_SUFFIX}")

        self.saved += 1
        logger.debug(f"✓ 맵 저장: {path.name}")
        return path


def save_sweep_plot(df: pd.DataFrame, path: Union[str, Path], x: str = 'ratio',
                    metrics: Sequence[str] = ('spe', 's_alpha', 'e_phi', 'auroc'),
                    title: Optional[str] = None) -> Path:
    """지표-대-설정값 꺾은선 그래프 (래스터 PNG)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.rcParams.update(PLOT_STYLE)

    fig, ax = plt.subplots(figsize=(6, 4))
    for metric in metrics:
        ax.plot(df[x], df[metric], marker='o', label=metric)
    ax.set_xlabel(x)
    ax.set_ylabel('score')
    ax.set_ylim(0.0, 1.05)
    if title:
        ax.set_title(title)
    ax.legend(loc='lower right')
    fig.tight_layout()
    fig.savefig(path, format='png')
    plt.close(fig)

    logger.info(f"✓ 그래프 저장: {path}")
    return path


def save_loss_plot(loss_log: Union[str, Path], path: Union[str, Path]) -> Optional[Path]:
    """loss_log.csv의 epoch 평균 손실 곡선"""
    loss_log = Path(loss_log)
    if not loss_log.exists():
        logger.warning(f"⚠ 손실 로그가 없습니다: {loss_log}")
        return None
    df = pd.read_csv(loss_log)
    means = df.groupby('epoch')['loss'].mean()

    plt.rcParams.update(PLOT_STYLE)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(means.index, means.values)
    ax.set_xlabel('epoch')
    ax.set_ylabel('MSE')
    ax.set_yscale('log')
    fig.tight_layout()
    fig.savefig(path, format='png')
    plt.close(fig)
    return Path(path)


def summary_lines(values: Dict[str, float]) -> str:
    return '\n'.join(f"    - {k}: {v:.4f}" if isinstance(v, float) else f"    - {k}: {v}"
                     for k, v in values.items())
