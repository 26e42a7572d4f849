"""
데이터셋 매니페스트
시퀀스 디렉토리별로 프레임을 샘플링하여 학습/테스트 목록 생성
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd
from PIL import Image as PILImage

from ood_mae.exceptions import ContractViolation, EmptyCorpus

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {'.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff'}
SPLITS = ('train', 'test')
LABELS = ('healthy', 'anomalous')
NO_GT = '-'


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    gt_path: Optional[str]
    split: str
    label: str


@dataclass
class DatasetManifest:
    """
    매니페스트 (이미지 경로, GT 경로, split, label 목록)

    불변 조건:
        - train split 항목은 모두 healthy, GT 없음
        - anomalous 항목은 GT 필수
        - 항목 1개 이상, 경로 중복 없음
    """

    entries: List[ManifestEntry]
    sample_rate: int = 1
    skipped: int = 0
    base_dir: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.sample_rate < 1:
            raise ContractViolation(f"sample_rate는 양의 정수여야 합니다: {self.sample_rate}")
        if not self.entries:
            raise EmptyCorpus("매니페스트 항목이 없습니다.")

        seen = set()
        for entry in self.entries:
            if entry.split not in SPLITS or entry.label not in LABELS:
                raise ContractViolation(f"잘못된 split/label: {entry}")
            if entry.split == 'train' and (entry.label != 'healthy' or entry.gt_path is not None):
                raise ContractViolation(f"train 항목은 GT 없는 healthy여야 합니다: {entry.image_path}")
            if entry.label == 'anomalous' and entry.gt_path is None:
                raise ContractViolation(f"anomalous 항목에 GT가 없습니다: {entry.image_path}")
            if entry.image_path in seen:
                raise ContractViolation(f"중복 경로: {entry.image_path}")
            seen.add(entry.image_path)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        """매니페스트 기준 상대 경로를 절대 경로로 변환"""
        if path is None:
            return None
        p = Path(path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def filter(self, split: Optional[str] = None, label: Optional[str] = None) -> List[ManifestEntry]:
        return [e for e in self.entries
                if (split is None or e.split == split) and (label is None or e.label == label)]

    @property
    def has_anomalous(self) -> bool:
        return any(e.label == 'anomalous' for e in self.entries)

    def image_ids(self) -> List[str]:
        """
        항목 순서대로 고유한 이미지 식별자

        기본은 '<시퀀스 디렉토리>__<파일명>', 겹치는 id가 있으면 상위 디렉토리를 하나씩 더 붙임

        Raises:
            ContractViolation: 경로 전체를 써도 id가 겹칠 때
        """
        parts = [_id_parts(e.image_path) for e in self.entries]
        longest = max(len(p) for p in parts)
        depth = 2
        while True:
            ids = ['__'.join(p[-depth:]) for p in parts]
            if len(set(ids)) == len(ids):
                return ids
            if depth >= longest:
                raise ContractViolation(f"이미지 id 중복: {sorted(i for i in set(ids) if ids.count(i) > 1)[:3]}")
            depth += 1


def _id_parts(image_path: str) -> tuple:
    p = Path(image_path).with_suffix('')
    return tuple(s for s in p.parts if s not in (p.anchor, '.', '..'))


def image_id(entry: ManifestEntry, depth: int = 2) -> str:
    """이미지 식별자 (시퀀스 디렉토리 + 파일명, 확장자 제외). 매니페스트 단위로는 DatasetManifest.image_ids 사용"""
    return '__'.join(_id_parts(entry.image_path)[-depth:])


def _is_readable(path: Path) -> bool:
    try:
        with PILImage.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def _sequence_dirs(root: Path) -> List[Path]:
    """시퀀스 디렉토리 목록 (root 바로 아래 이미지가 있으면 root 자체도 하나의 시퀀스)"""
    dirs = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        if any(Path(f).suffix.lower() in IMAGE_SUFFIXES for f in filenames):
            dirs.append(Path(dirpath))
    return sorted(dirs)


def build_manifest(root_dir: Union[str, Path],
                   sample_rate: int,
                   split: str,
                   gt_dir: Union[str, Path, None] = None) -> DatasetManifest:
    """
    시퀀스 디렉토리를 순회하며 sample_rate 프레임마다 하나씩 수집

    Args:
        root_dir: 시퀀스 디렉토리들이 있는 루트
        sample_rate: 프레임 샘플링 간격 (0, r, 2r, ...)
        split: 'train' 또는 'test'
        gt_dir: root_dir와 같은 구조의 마스크 트리 (마스크가 있으면 anomalous)

    Returns:
        DatasetManifest (읽을 수 없는 파일 수는 skipped에 기록)
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise EmptyCorpus(f"디렉토리가 없습니다: {root}")
    if sample_rate < 1:
        raise ContractViolation(f"sample_rate는 양의 정수여야 합니다: {sample_rate}")
    if split not in SPLITS:
        raise ContractViolation(f"알 수 없는 split: {split}")

    gt_root = Path(gt_dir) if gt_dir is not None else None
    entries = []
    skipped = 0

    for seq_dir in _sequence_dirs(root):
        frames = sorted(p.name for p in seq_dir.iterdir()
                        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        for name in frames[::sample_rate]:
            path = seq_dir / name
            if not _is_readable(path):
                skipped += 1
                continue

            rel = path.relative_to(root)
            gt_path = None
            if gt_root is not None and split == 'test':
                candidate = (gt_root / rel).with_suffix('.png')
                if candidate.exists():
                    gt_path = str(candidate)

            entries.append(ManifestEntry(
                image_path=str(path),
                gt_path=gt_path,
                split=split,
                label='anomalous' if gt_path else 'healthy',
            ))

    if skipped:
        logger.warning(f"⚠ 읽을 수 없는 파일 {skipped}개 건너뜀")
    if not entries:
        raise EmptyCorpus(f"이미지를 찾을 수 없습니다: {root}")

    logger.info(f"✓ 매니페스트 생성: {len(entries)}개 항목 (sample_rate={sample_rate}, split={split})")
    return DatasetManifest(entries=entries, sample_rate=sample_rate, skipped=skipped)


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """TSV 저장: image_path<TAB>gt_path_or_dash<TAB>split<TAB>label"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def rel(p: Optional[str]) -> str:
        if p is None:
            return NO_GT
        try:
            return Path(os.path.relpath(manifest.resolve(p), path.parent)).as_posix()
        except ValueError:
            return str(p)

    df = pd.DataFrame([
        (rel(e.image_path), rel(e.gt_path), e.split, e.label) for e in manifest.entries
    ])
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(f"# sample_rate={manifest.sample_rate}\n")
        df.to_csv(f, sep='\t', header=False, index=False, lineterminator='\n')
    return path


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """TSV 매니페스트 로드 (상대 경로는 매니페스트 위치 기준)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"매니페스트 파일이 없습니다: {path}")

    sample_rate = 1
    with open(path, encoding='utf-8') as f:
        first = f.readline()
    # 주석은 첫 줄 헤더뿐 (경로 안의 '#'은 그대로 유지)
    has_header = first.startswith('#')
    if first.startswith('# sample_rate='):
        sample_rate = int(first.split('=', 1)[1])

    try:
        df = pd.read_csv(path, sep='\t', header=None, skiprows=1 if has_header else 0, dtype=str,
                         keep_default_na=False, names=['image_path', 'gt_path', 'split', 'label'])
    except pd.errors.EmptyDataError:
        raise EmptyCorpus(f"빈 매니페스트: {path}")
    entries = [
        ManifestEntry(
            image_path=row.image_path,
            gt_path=None if row.gt_path == NO_GT else row.gt_path,
            split=row.split,
            label=row.label,
        )
        for row in df.itertuples(index=False)
    ]
    return DatasetManifest(entries=entries, sample_rate=sample_rate, base_dir=path.parent)
