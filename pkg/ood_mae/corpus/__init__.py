"""
코퍼스 패키지
매니페스트, 이미지 입출력, 합성 데이터 생성기
"""

from .image_io import load_gray, load_image, load_mask, save_gray, save_image, save_mask
from .manifest import (DatasetManifest, ManifestEntry, build_manifest, image_id,
                       read_manifest, write_manifest)
from .synthetic import synth_anomalous, synth_healthy

__all__ = [
    'DatasetManifest', 'ManifestEntry', 'build_manifest', 'image_id',
    'read_manifest', 'write_manifest',
    'load_image', 'load_mask', 'load_gray', 'save_image', 'save_mask', 'save_gray',
    'synth_healthy', 'synth_anomalous',
]
