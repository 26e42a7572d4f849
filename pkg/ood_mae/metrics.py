"""
분할 평가 지표
특이도(Spe), 구조 척도(S_α), 향상 정렬 척도(E_Φ), 픽셀 AUROC
Spe, E_Φ는 0~255 모든 임계값에서 계산하여 최댓값 보고
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from ood_mae.exceptions import ShapeError

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
NUM_THRESHOLDS = 256
ALPHA = 0.5
METRIC_COLUMNS = ['image_id', 'max_spe', 's_alpha', 'max_ephi', 'auroc']


def _as_2d(arr, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if hasattr(arr, 'scores'):
        a = np.asarray(arr.scores)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"{name}: [1, H, W] 또는 [H, W] 형태가 필요합니다: {a.shape}")
    return a


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p = _as_2d(pred, 'pred')
    g = _as_2d(gt, 'gt')
    if p.shape != g.shape:
        raise ShapeError(f"형태 불일치: {p.shape} vs {g.shape}")
    return p, g.astype(bool)


def quantise(scores: np.ndarray) -> np.ndarray:
    """[0,1] 점수 -> round(255 * score) (PNG 저장 값과 동일)"""
    return np.round(np.clip(scores, 0.0, 1.0) * 255.0).astype(np.int64)


def binarise(amap, t: int) -> np.ndarray:
    """round(255 * score) > t 인 픽셀을 1로"""
    if not isinstance(t, (int, np.integer)) or not 0 <= t <= 255:
        raise ValueError(f"임계값은 0~255 정수여야 합니다: {t}")
    return (quantise(_as_2d(amap, 'map')) > t).astype(np.uint8)


def specificity(pred, gt) -> float:
    """TN / (TN + FP), 배경 픽셀이 없으면 1"""
    p, g = _pair(pred, gt)
    p = p.astype(bool)
    negatives = int((~g).sum())
    if negatives == 0:
        return 1.0
    tn = int((~p & ~g).sum())
    return tn / negatives


def _enhanced_from_counts(tp, fp, fn, tn) -> np.ndarray:
    """
    이진 pred/gt의 혼동 행렬 값만으로 E_Φ 계산 (임계값 배열 단위 벡터화)
    (p, g) 네 가지 조합마다 정렬 행렬 값이 상수이므로 가중 합으로 계산
    """
    tp, fp, fn, tn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn, tn))
    n = tp + fp + fn + tn
    mean_p = (tp + fp) / n
    mean_g = (tp + fn) / n

    total = np.zeros_like(n)
    for p_val, g_val, count in ((1, 1, tp), (1, 0, fp), (0, 1, fn), (0, 0, tn)):
        a = p_val - mean_p
        b = g_val - mean_g
        xi = 2.0 * a * b / (a * a + b * b + EPS)
        total += count * (xi + 1.0) ** 2 / 4.0
    score = total / n

    # GT가 전부 배경 / 전부 전경인 경우
    all_bg = (tp + fn) == 0
    all_fg = (fp + tn) == 0
    score = np.where(all_bg, (fn + tn) / n, score)
    score = np.where(all_fg, (tp + fp) / n, score)
    return np.clip(score, 0.0, 1.0)


def e_measure(pred, gt) -> float:
    """향상 정렬 척도 E_Φ (이진 예측)"""
    p, g = _pair(pred, gt)
    p = p.astype(bool)
    tp = int((p & g).sum())
    fp = int((p & ~g).sum())
    fn = int((~p & g).sum())
    tn = int((~p & ~g).sum())
    return float(_enhanced_from_counts(tp, fp, fn, tn))


def confusion_curves(amap, gt) -> Dict[str, np.ndarray]:
    """임계값 0~255 각각의 TP, FP, FN, TN (히스토그램 누적합으로 계산)"""
    s, g = _pair(amap, gt)
    q = quantise(s)
    fg_hist = np.bincount(q[g], minlength=NUM_THRESHOLDS)
    bg_hist = np.bincount(q[~g], minlength=NUM_THRESHOLDS)
    # value > t 인 개수 = t+1 이상 bin 합
    fg_above = np.concatenate([np.cumsum(fg_hist[::-1])[::-1][1:], [0]])
    bg_above = np.concatenate([np.cumsum(bg_hist[::-1])[::-1][1:], [0]])
    n_fg, n_bg = int(g.sum()), int((~g).sum())
    return {
        'tp': fg_above,
        'fp': bg_above,
        'fn': n_fg - fg_above,
        'tn': n_bg - bg_above,
    }


def specificity_curve(amap, gt) -> np.ndarray:
    c = confusion_curves(amap, gt)
    negatives = c['tn'] + c['fp']
    return np.where(negatives > 0, c['tn'] / np.maximum(negatives, 1), 1.0).astype(np.float64)


def e_measure_curve(amap, gt) -> np.ndarray:
    c = confusion_curves(amap, gt)
    return _enhanced_from_counts(c['tp'], c['fp'], c['fn'], c['tn'])


def max_over_thresholds(metric: str, amap, gt) -> Tuple[float, np.ndarray]:
    """
    모든 임계값 t ∈ {0..255}에서 지표 계산

    Args:
        metric: 'spe' 또는 'ephi'

    Returns:
        (최댓값, 길이 256 곡선)
    """
    key = metric.lower()
    if key in ('spe', 'specificity'):
        curve = specificity_curve(amap, gt)
    elif key in ('ephi', 'e_phi', 'e-measure', 'e_measure'):
        curve = e_measure_curve(amap, gt)
    else:
        raise ValueError(f"알 수 없는 지표: {metric}")
    return float(curve.max()), curve


# ------------------------------------------------------------
# 구조 척도 S_α (연속 맵)
# ------------------------------------------------------------

def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = np.where(gt, pred, 0.0)
    bg = np.where(gt, 0.0, 1.0 - pred)
    u = float(gt.mean())
    return u * _object_score(fg[gt]) + (1.0 - u) * _object_score(bg[~gt])


def _centroid(gt: np.ndarray) -> Tuple[int, int]:
    """1부터 시작하는 좌표 기준 무게중심 (반올림: half-up)"""
    rows, cols = gt.shape
    total = gt.sum()
    if total == 0:
        return _round_half_up(cols / 2), _round_half_up(rows / 2)
    i = np.arange(1, cols + 1, dtype=np.float64)
    j = np.arange(1, rows + 1, dtype=np.float64)
    x = _round_half_up(float((gt.sum(axis=0) * i).sum() / total))
    y = _round_half_up(float((gt.sum(axis=1) * j).sum() / total))
    return x, y


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.size == 0:
        return 0.0
    g = gt.astype(np.float64)
    n = float(pred.size)
    x, y = float(pred.mean()), float(g.mean())
    dx, dy = pred - x, g - y
    denom = n - 1.0 + EPS
    sigma_x2 = float((dx * dx).sum()) / denom
    sigma_y2 = float((dy * dy).sum()) / denom
    sigma_xy = float((dx * dy).sum()) / denom

    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    x, y = _centroid(gt)
    h, w = gt.shape
    area = float(h * w)
    weights = [
        x * y / area,
        (w - x) * y / area,
        x * (h - y) / area,
    ]
    weights.append(1.0 - sum(weights))
    regions = [
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    ]
    return sum(wt * _ssim(pred[r], gt[r]) for wt, r in zip(weights, regions))


def structure_measure(amap, gt, alpha: float = ALPHA) -> float:
    """S_α = α·S_object + (1-α)·S_region (연속 맵, [0, 1]로 클립)"""
    p, g = _pair(amap, gt)
    p = p.astype(np.float64)
    y = g.mean()
    if y == 0:
        score = 1.0 - p.mean()
    elif y == 1:
        score = p.mean()
    else:
        score = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(np.clip(score, 0.0, 1.0))


def pixel_auroc(amap, gt) -> float:
    """순위 기반 AUROC (동점은 중간 순위), GT가 한 클래스뿐이면 NaN"""
    s, g = _pair(amap, gt)
    labels = g.ravel()
    if labels.all() or not labels.any():
        return float('nan')
    return float(roc_auc_score(labels, s.ravel().astype(np.float64)))


# ------------------------------------------------------------
# 이미지 / 데이터셋 단위 평가
# ------------------------------------------------------------

@dataclass
class ImageMetrics:
    image_id: str
    max_spe: float
    s_alpha: float
    max_ephi: float
    auroc: float
    spe_curve: np.ndarray
    ephi_curve: np.ndarray
    spe_at_best_ephi: float
    mean_ephi: float

    @property
    def auroc_defined(self) -> bool:
        return not math.isnan(self.auroc)


def evaluate_image(image_id: str, amap, gt) -> ImageMetrics:
    """정규화된 이상 맵 하나에 대한 전체 지표"""
    max_spe, spe_curve = max_over_thresholds('spe', amap, gt)
    max_ephi, ephi_curve = max_over_thresholds('ephi', amap, gt)
    best_t = int(np.argmax(ephi_curve))
    return ImageMetrics(
        image_id=image_id,
        max_spe=max_spe,
        s_alpha=structure_measure(amap, gt),
        max_ephi=max_ephi,
        auroc=pixel_auroc(amap, gt),
        spe_curve=spe_curve,
        ephi_curve=ephi_curve,
        spe_at_best_ephi=float(spe_curve[best_t]),
        mean_ephi=float(ephi_curve.mean()),
    )


@dataclass
class MetricsReport:
    """이미지별 지표와 데이터셋 평균"""

    images: List[ImageMetrics] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([
            {'image_id': m.image_id, 'max_spe': m.max_spe, 's_alpha': m.s_alpha,
             'max_ephi': m.max_ephi, 'auroc': m.auroc}
            for m in self.images
        ], columns=METRIC_COLUMNS)

    @property
    def undefined_auroc(self) -> List[str]:
        return [m.image_id for m in self.images if not m.auroc_defined]

    def summary(self) -> Dict[str, float]:
        """데이터셋 평균 (AUROC는 정의된 이미지에 대해서만)"""
        if not self.images:
            return {}
        aurocs = [m.auroc for m in self.images if m.auroc_defined]
        return {
            'num_images': len(self.images),
            'max_spe': float(np.mean([m.max_spe for m in self.images])),
            's_alpha': float(np.mean([m.s_alpha for m in self.images])),
            'max_ephi': float(np.mean([m.max_ephi for m in self.images])),
            'auroc': float(np.mean(aurocs)) if aurocs else float('nan'),
            'auroc_undefined': len(self.images) - len(aurocs),
            'spe_at_best_ephi': float(np.mean([m.spe_at_best_ephi for m in self.images])),
            'mean_ephi': float(np.mean([m.mean_ephi for m in self.images])),
        }

    def mean_curves(self) -> pd.DataFrame:
        return pd.DataFrame({
            'threshold': np.arange(NUM_THRESHOLDS),
            'spe': np.mean([m.spe_curve for m in self.images], axis=0),
            'ephi': np.mean([m.ephi_curve for m in self.images], axis=0),
        })

    def save(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        """
        보고서 저장
        - summary.txt: key: value (한 줄에 하나)
        - per_image.csv: image_id,max_spe,s_alpha,max_ephi,auroc
        - threshold_curves.csv / threshold_curves_per_image.csv
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            'summary': out / 'summary.txt',
            'per_image': out / 'per_image.csv',
            'curves': out / 'threshold_curves.csv',
            'curves_per_image': out / 'threshold_curves_per_image.csv',
        }

        with open(paths['summary'], 'w', encoding='utf-8', newline='\n') as f:
            for key, value in self.summary().items():
                f.write(f"{key}: {value:.6f}\n" if isinstance(value, float) else f"{key}: {value}\n")

        self.to_dataframe().to_csv(paths['per_image'], index=False, lineterminator='\n', float_format='%.8f')
        self.mean_curves().to_csv(paths['curves'], index=False, lineterminator='\n', float_format='%.8f')

        rows = []
        for m in self.images:
            for t in range(NUM_THRESHOLDS):
                rows.append((m.image_id, t, m.spe_curve[t], m.ephi_curve[t]))
        pd.DataFrame(rows, columns=['image_id', 'threshold', 'spe', 'ephi']).to_csv(
            paths['curves_per_image'], index=False, lineterminator='\n', float_format='%.8f')

        logger.info(f"✓ 평가 보고서 저장: {out}")
        return paths


def evaluate_dataset(items: Iterable[Tuple[str, np.ndarray, np.ndarray]],
                     max_workers: Optional[int] = None) -> MetricsReport:
    """
    (image_id, 정규화 맵, GT) 목록 평가
    병렬 실행하되 입력 순서대로 집계하여 평균이 결정적
    """
    items = list(items)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda it: evaluate_image(*it), items))
    report = MetricsReport(images=results)
    if report.undefined_auroc:
        logger.warning(f"⚠ AUROC 정의 불가(단일 클래스 GT) 이미지 {len(report.undefined_auroc)}개")
    return report
