"""
ood_mae
건강 이미지로만 학습한 마스크 오토인코더의 재구성 오차로 이상 영역을 찾는 파이프라인
"""

from .exceptions import (ArtifactMissing, ConfigError, ContractViolation, DecodeError, DivergenceError,
                         EmptyCorpus, EmptyStream, OodMaeError, ShapeError)
from .inference import AnomalyMap, InferenceConfig, anomaly_score, image_score, infer_image, reconstruct_ood
from .latent_stats import LatentStats, accumulate_stats, identity_stats, standardise
from .metrics import MetricsReport, e_measure, evaluate_dataset, specificity, structure_measure
from .model import ModelConfig, ModelPresets, init_model
from .trainer import TrainConfig, train

__version__ = '0.1.0'

__all__ = [
    'OodMaeError', 'EmptyCorpus', 'DecodeError', 'ShapeError', 'ConfigError',
    'ContractViolation', 'DivergenceError', 'EmptyStream', 'ArtifactMissing',
    'ModelConfig', 'ModelPresets', 'init_model',
    'TrainConfig', 'train',
    'LatentStats', 'accumulate_stats', 'identity_stats', 'standardise',
    'InferenceConfig', 'AnomalyMap', 'reconstruct_ood', 'anomaly_score', 'image_score', 'infer_image',
    'MetricsReport', 'specificity', 'structure_measure', 'e_measure', 'evaluate_dataset',
]
