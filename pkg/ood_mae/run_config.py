"""
실행 설정
하나의 KEY=VALUE 설정 파일(python-dotenv) + 명령행 덮어쓰기 -> RunConfig

키 형식: <SECTION>_<FIELD> (대문자)
    RUN_DIR, RUN_SEED, RUN_STANDARDISE
    MODEL_PRESET, MODEL_PATCH_SIZE, ...
    CORPUS_*, TRAIN_*, INFER_*, OUTPUT_*
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import dotenv_values

from ood_mae.exceptions import ConfigError
from ood_mae.inference import InferenceConfig
from ood_mae.model.config import ModelConfig, ModelPresets
from ood_mae.trainer import TrainConfig

logger = logging.getLogger(__name__)

ECHO_FILENAME = 'config_resolved.env'

# RUN_SEED 하나로 결정되는 필드 (파일에서 따로 지정 불가)
SEEDED_FIELDS = {'TRAIN': {'seed'}, 'INFER': {'mask_seed'}}


@dataclass
class CorpusConfig:
    """코퍼스 위치와 합성 코퍼스 크기"""

    dir: str = 'data/synthetic'
    train_manifest: str = ''
    test_manifest: str = ''
    n_healthy: int = 200
    n_test_healthy: int = 0
    n_anomalous: int = 50
    n_out_domain: int = 0

    @property
    def train_manifest_path(self) -> Path:
        return Path(self.train_manifest) if self.train_manifest else Path(self.dir) / 'train.tsv'

    @property
    def test_manifest_path(self) -> Path:
        return Path(self.test_manifest) if self.test_manifest else Path(self.dir) / 'test.tsv'


@dataclass
class OutputConfig:
    save_raw_maps: bool = False
    save_recon: bool = False
    num_workers: int = 4
    ablate_ratios: tuple = (0.15, 0.35, 0.55, 0.75)


@dataclass
class RunConfig:
    """모든 설정을 합친 실행 설정 (모든 필드에 기본값 있음)"""

    run_dir: str = 'runs/default'
    seed: int = 0
    standardise: bool = True
    preset: str = 'tiny'
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def run_path(self) -> Path:
        return Path(self.run_dir)

    @property
    def checkpoint_path(self) -> Path:
        return self.run_path / 'checkpoint.pt'

    @property
    def stats_path(self) -> Path:
        return self.run_path / 'latent_stats.npz'

    def validate(self) -> 'RunConfig':
        self.model.validate()
        self.train.validate()
        self.inference.validate()
        if self.output.num_workers < 1:
            raise ConfigError(f"OUTPUT_NUM_WORKERS는 1 이상이어야 합니다: {self.output.num_workers}")
        for ratio in self.output.ablate_ratios:
            if not 0.0 < ratio < 1.0:
                raise ConfigError(f"절제 실험 비율은 (0, 1) 범위여야 합니다: {ratio}")
        for name in ('n_healthy', 'n_test_healthy', 'n_anomalous', 'n_out_domain'):
            if getattr(self.corpus, name) < 0:
                raise ConfigError(f"CORPUS_{name.upper()}는 음수일 수 없습니다.")
        if self.corpus.n_test_healthy > self.corpus.n_healthy:
            raise ConfigError("CORPUS_N_TEST_HEALTHY가 CORPUS_N_HEALTHY보다 큽니다.")
        return self

    def sections(self) -> Dict[str, Any]:
        return {'CORPUS': self.corpus, 'TRAIN': self.train, 'INFER': self.inference, 'OUTPUT': self.output}

    def to_env(self) -> Dict[str, str]:
        """평탄화된 KEY -> 문자열 값"""
        env = {
            'RUN_DIR': self.run_dir,
            'RUN_SEED': str(self.seed),
            'RUN_STANDARDISE': _format(self.standardise),
            'MODEL_PRESET': self.preset,
        }
        for f in fields(self.model):
            env[f"MODEL_{f.name.upper()}"] = _format(getattr(self.model, f.name))
        for section, obj in self.sections().items():
            skip = SEEDED_FIELDS.get(section, set())
            for f in fields(obj):
                if f.name not in skip:
                    env[f"{section}_{f.name.upper()}"] = _format(getattr(obj, f.name))
        return env

    def write_echo(self, run_dir: Union[str, Path, None] = None) -> Path:
        """정렬된 KEY=VALUE 형식으로 run_dir에 기록 (타임스탬프 없음)"""
        out = Path(run_dir) if run_dir is not None else self.run_path
        out.mkdir(parents=True, exist_ok=True)
        path = out / ECHO_FILENAME
        env = self.to_env()
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for key in sorted(env):
                f.write(f"{key}={env[key]}\n")
        return path


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (tuple, list)):
        return ','.join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, raw: str, default: Any) -> Any:
    """기본값의 타입에 맞춰 문자열 변환"""
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(',') if v.strip())
    except ValueError:
        raise ConfigError(f"{key} 값을 해석할 수 없습니다: {raw!r}")
    return raw


def _build_section(section: str, cls, values: Dict[str, str], used: set):
    base = cls()
    skip = SEEDED_FIELDS.get(section, set())
    updates = {}
    for f in fields(cls):
        key = f"{section}_{f.name.upper()}"
        if key in values and f.name not in skip:
            updates[f.name] = _parse(key, values[key], getattr(base, f.name))
            used.add(key)
    return replace(base, **updates)


def load_run_config(path: Union[str, Path, None] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    설정 파일 로드 후 명령행 값으로 덮어쓰기

    Args:
        path: KEY=VALUE 설정 파일 (None이면 기본값만 사용)
        overrides: 같은 키 형식의 덮어쓰기 값 (None 값은 무시)

    Raises:
        ConfigError: 알 수 없는 키, 해석할 수 없는 값, 불변 조건 위반
    """
    values: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"설정 파일이 없습니다: {path}")
        values.update({k.upper(): v for k, v in dotenv_values(path).items() if v is not None})
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key.upper()] = _format(value)

    used = set()
    defaults = RunConfig()

    run_dir = values.get('RUN_DIR', defaults.run_dir)
    seed = _parse('RUN_SEED', values['RUN_SEED'], 0) if 'RUN_SEED' in values else defaults.seed
    standardise = _parse('RUN_STANDARDISE', values['RUN_STANDARDISE'], True) \
        if 'RUN_STANDARDISE' in values else defaults.standardise
    preset = values.get('MODEL_PRESET', defaults.preset)
    used.update({'RUN_DIR', 'RUN_SEED', 'RUN_STANDARDISE', 'MODEL_PRESET'})

    preset_cfg = ModelPresets.create(preset)
    model_updates = {}
    for f in fields(ModelConfig):
        key = f"MODEL_{f.name.upper()}"
        if key in values:
            model_updates[f.name] = _parse(key, values[key], getattr(preset_cfg, f.name))
            used.add(key)
    model = ModelPresets.create(preset, **model_updates)

    corpus = _build_section('CORPUS', CorpusConfig, values, used)
    train = replace(_build_section('TRAIN', TrainConfig, values, used), seed=seed)
    inference = replace(_build_section('INFER', InferenceConfig, values, used), mask_seed=seed)
    output = _build_section('OUTPUT', OutputConfig, values, used)

    # 풀링 커널 기본값은 패치 크기
    if 'INFER_POOL_KERNEL' not in values:
        inference = replace(inference, pool_kernel=model.patch_size)

    unknown = sorted(set(values) - used)
    if unknown:
        raise ConfigError(f"알 수 없는 설정 키: {unknown}")

    config = RunConfig(run_dir=run_dir, seed=seed, standardise=standardise, preset=preset,
                       model=model, corpus=corpus, train=train, inference=inference, output=output)
    return config.validate()
