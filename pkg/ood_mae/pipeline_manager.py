"""
파이프라인 매니저
코퍼스 합성 -> 학습 -> 잠재 통계 -> 추론 -> 평가, 두 가지 절제 실험을 통합 관리
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ood_mae.artifact_saver import ArtifactSaver, save_loss_plot, save_sweep_plot, summary_lines
from ood_mae.corpus import (DatasetManifest, ManifestEntry, load_gray, load_image, load_mask,
                            read_manifest, save_image, save_mask, synth_anomalous, synth_healthy,
                            write_manifest)
from ood_mae.exceptions import ArtifactMissing, ConfigError, ShapeError
from ood_mae.inference import image_score, infer_image
from ood_mae.latent_stats import LatentStats, accumulate_stats, identity_stats, load_stats, save_stats
from ood_mae.metrics import MetricsReport, evaluate_dataset
from ood_mae.model import MaskedAutoencoder, encode, load_checkpoint
from ood_mae.patchgrid import derive_seed, sample_mask
from ood_mae.run_config import RunConfig
from ood_mae.trainer import train

logger = logging.getLogger('PipelineManager')

PathLike = Union[str, Path]

# 합성 코퍼스의 이미지 종류별 시드 스트림
HEALTHY_TRAIN, HEALTHY_TEST, ANOMALOUS_TEST, ANOMALOUS_OUT = range(4)

SWEEP_COLUMNS = ['ratio', 'spe', 's_alpha', 'e_phi', 'auroc']
COMPARISON_COLUMNS = ['setting', 'spe', 's_alpha', 'e_phi', 'auroc']


def _metric_row(report: MetricsReport) -> Dict[str, float]:
    summary = report.summary()
    return {
        'spe': summary['max_spe'],
        's_alpha': summary['s_alpha'],
        'e_phi': summary['max_ephi'],
        'auroc': summary['auroc'],
    }


class PipelineManager:
    """명령별 실행 (각 명령은 run_dir에 설정 사본을 남김)"""

    def __init__(self, config: RunConfig):
        """
        Args:
            config: 해석이 끝난 실행 설정
        """
        self.config = config.validate()
        self.run_dir = config.run_path

    def _begin(self, command: str):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.config.write_echo(self.run_dir)
        logger.info(f"\n{'=' * 60}")
        logger.info(f"▶ [{command}] run_dir={self.run_dir}")
        logger.info(f"{'=' * 60}")

    def _load_model(self, checkpoint_path: Optional[PathLike] = None) -> MaskedAutoencoder:
        path = Path(checkpoint_path) if checkpoint_path else self.config.checkpoint_path
        checkpoint = load_checkpoint(path)
        if checkpoint.model_config != self.config.model:
            logger.warning(f"⚠ 체크포인트 모델 설정이 실행 설정과 다릅니다. 체크포인트 설정 사용: {path}")
        return checkpoint.to_model(self.config.train.device)

    # ------------------------------------------------------------
    # synth-corpus
    # ------------------------------------------------------------

    def cmd_synth_corpus(self, n_healthy: int, n_anomalous: int, seed: int, out_dir: PathLike,
                         n_test_healthy: int = 0, n_out_domain: int = 0,
                         resolution: Optional[int] = None) -> Dict[str, Path]:
        """
        합성 코퍼스 생성

        Args:
            n_healthy: 건강 이미지 총 수 (그중 n_test_healthy개는 테스트로)
            n_anomalous: 이상 이미지 수 (모두 테스트, GT 마스크 포함)
            seed: 코퍼스 시드
            out_dir: 출력 디렉토리
            n_test_healthy: 테스트용 건강 이미지 수
            n_out_domain: 다른 도메인 이상 이미지 수 (test_out_domain.tsv)
            resolution: 이미지 크기 (None이면 모델 해상도)

        Returns:
            {'train': ..., 'test': ..., ['test_out_domain': ...]} 매니페스트 경로
        """
        self._begin('synth-corpus')
        out = Path(out_dir)
        res = resolution or self.config.model.resolution
        n_train = n_healthy - n_test_healthy
        if n_train < 1:
            raise ConfigError(f"학습용 건강 이미지가 없습니다 (n_healthy={n_healthy}, n_test_healthy={n_test_healthy})")

        def healthy(split: str, stream: int, count: int) -> List[ManifestEntry]:
            entries = []
            for i in tqdm(range(count), desc=f"healthy/{split}"):
                img = synth_healthy(derive_seed(seed, stream, i), res)
                path = save_image(img, out / 'images' / split / f"healthy_{i:04d}.png")
                entries.append(ManifestEntry(str(path), None, split, 'healthy'))
            return entries

        def anomalous(folder: str, stream: int, count: int, domain: str) -> List[ManifestEntry]:
            entries = []
            for i in tqdm(range(count), desc=f"anomalous/{folder}"):
                img, mask = synth_anomalous(derive_seed(seed, stream, i), res, domain=domain)
                path = save_image(img, out / 'images' / folder / f"anomalous_{i:04d}.png")
                gt = save_mask(mask, out / 'masks' / folder / f"anomalous_{i:04d}.png")
                entries.append(ManifestEntry(str(path), str(gt), 'test', 'anomalous'))
            return entries

        train_entries = healthy('train', HEALTHY_TRAIN, n_train)
        test_entries = healthy('test', HEALTHY_TEST, n_test_healthy) \
            + anomalous('test', ANOMALOUS_TEST, n_anomalous, 'in')

        paths = {
            'train': write_manifest(DatasetManifest(train_entries), out / 'train.tsv'),
            'test': write_manifest(DatasetManifest(test_entries), out / 'test.tsv'),
        }
        if n_out_domain:
            out_entries = anomalous('test_out', ANOMALOUS_OUT, n_out_domain, 'out')
            paths['test_out_domain'] = write_manifest(DatasetManifest(out_entries), out / 'test_out_domain.tsv')

        logger.info(f"✓ 합성 코퍼스 생성: 학습 {len(train_entries)}개, 테스트 {len(test_entries)}개 "
                    f"(이상 {n_anomalous}개, 다른 도메인 {n_out_domain}개) -> {out}")
        return paths

    # ------------------------------------------------------------
    # train / stats
    # ------------------------------------------------------------

    def cmd_train(self, manifest_path: Optional[PathLike] = None):
        """건강 학습 매니페스트로 MAE 학습 -> checkpoint.pt, loss_log.csv, loss_curve.png"""
        self._begin('train')
        manifest = read_manifest(manifest_path or self.config.corpus.train_manifest_path)
        checkpoint = train(manifest, self.config.model, self.config.train, run_dir=self.run_dir)
        save_loss_plot(self.run_dir / 'loss_log.csv', self.run_dir / 'loss_curve.png')
        return checkpoint

    def cmd_stats(self, checkpoint_path: Optional[PathLike] = None,
                  manifest_path: Optional[PathLike] = None) -> LatentStats:
        """
        건강 학습 이미지 전체를 인코더에 통과시켜 잠재 통계 저장
        이미지 i의 마스크 시드 = derive_seed(seed, i)
        """
        self._begin('stats')
        model = self._load_model(checkpoint_path)
        model_cfg = model.config
        manifest = read_manifest(manifest_path or self.config.corpus.train_manifest_path)
        entries = manifest.filter(split='train', label='healthy')
        ratio = self.config.inference.masking_ratio

        def stream():
            for idx, entry in enumerate(tqdm(entries, desc="잠재 통계")):
                img = load_image(manifest.resolve(entry.image_path), model_cfg.resolution)
                mask = sample_mask(model_cfg.num_patches, ratio, derive_seed(self.config.seed, idx))
                yield encode(img, mask, model)

        stats = accumulate_stats(stream(), granularity=self.config.inference.stats_mode,
                                 num_patches=model_cfg.num_patches)
        save_stats(stats, self.config.stats_path)
        return stats

    # ------------------------------------------------------------
    # infer / eval
    # ------------------------------------------------------------

    def _resolve_stats(self, model: MaskedAutoencoder, stats_path: Optional[PathLike],
                       checkpoint_path: Optional[PathLike], standardise: bool) -> LatentStats:
        cfg = model.config
        if not standardise:
            logger.info("표준화 생략 (항등 통계 사용)")
            return identity_stats(cfg.embed_dim, self.config.inference.stats_mode, cfg.num_patches)

        path = Path(stats_path) if stats_path else self.config.stats_path
        stats = load_stats(path)
        try:
            stats.check_compatible(cfg.embed_dim, cfg.num_patches)
        except ShapeError as e:
            ckpt = checkpoint_path or self.config.checkpoint_path
            raise ShapeError(f"통계 파일 '{path}'와 체크포인트 '{ckpt}'가 맞지 않습니다: {e}") from e
        return stats

    def cmd_infer(self, checkpoint_path: Optional[PathLike] = None,
                  stats_path: Optional[PathLike] = None,
                  manifest_path: Optional[PathLike] = None,
                  standardise: Optional[bool] = None,
                  out_dir: Optional[PathLike] = None) -> List[Path]:
        """
        테스트 이미지마다 이상 맵 PNG 저장 (+ image_scores.csv)

        Returns:
            저장된 맵 경로 목록 (매니페스트 순서)
        """
        self._begin('infer')
        standardise = self.config.standardise if standardise is None else standardise
        model = self._load_model(checkpoint_path)
        stats = self._resolve_stats(model, stats_path, checkpoint_path, standardise)
        manifest = read_manifest(manifest_path or self.config.corpus.test_manifest_path)

        out = Path(out_dir) if out_dir else self.run_dir
        saver = ArtifactSaver(out, save_raw=self.config.output.save_raw_maps,
                              save_recon=self.config.output.save_recon)

        paths, rows = [], []
        for key, entry in tqdm(list(zip(manifest.image_ids(), manifest.entries)), desc="추론"):
            img = load_image(manifest.resolve(entry.image_path), model.config.resolution)
            recon, amap = infer_image(img, model, stats, self.config.inference)
            paths.append(saver.save_result(key, img, recon, amap))
            rows.append({'image_id': key, 'label': entry.label, 'score': image_score(amap)})

        scores = pd.DataFrame(rows, columns=['image_id', 'label', 'score'])
        scores.to_csv(out / 'image_scores.csv', index=False, lineterminator='\n', float_format='%.10g')

        means = scores.groupby('label')['score'].mean().to_dict()
        logger.info(f"✓ 이상 맵 {saver.saved}개 저장 -> {saver.maps_dir}")
        logger.info(f"    - 평균 이미지 점수: {means}")
        return paths

    def cmd_eval(self, maps_dir: Optional[PathLike] = None,
                 manifest_path: Optional[PathLike] = None,
                 out_dir: Optional[PathLike] = None) -> MetricsReport:
        """
        저장된 맵 PNG와 GT로 지표 계산 (GT 없는 건강 이미지는 전부 0인 GT)

        Raises:
            ArtifactMissing: 테스트 항목의 맵이 없을 때 (누락 id 목록 포함)
        """
        self._begin('eval')
        maps = Path(maps_dir) if maps_dir else self.run_dir / 'maps'
        manifest = read_manifest(manifest_path or self.config.corpus.test_manifest_path)

        keyed = list(zip(manifest.image_ids(), manifest.entries))
        missing = [key for key, _ in keyed if not (maps / f"{key}.png").exists()]
        if missing:
            logger.error(f"✗ 이상 맵 누락 {len(missing)}개: {missing[:5]}")
            raise ArtifactMissing(f"이상 맵이 없는 테스트 항목 {len(missing)}개: {missing}", missing=missing)

        items = []
        for key, entry in tqdm(keyed, desc="맵 로드"):
            amap = load_gray(maps / f"{key}.png")
            size = amap.shape[-1]
            if entry.gt_path is None:
                gt = np.zeros_like(amap, dtype=np.uint8)
            else:
                gt = load_mask(manifest.resolve(entry.gt_path), size)
            items.append((key, amap, gt))

        report = evaluate_dataset(items, max_workers=self.config.output.num_workers)
        report.save(Path(out_dir) if out_dir else self.run_dir / 'metrics')
        logger.info(f"✓ 평가 완료: {len(report)}개 이미지\n{summary_lines(report.summary())}")
        return report

    # ------------------------------------------------------------
    # 절제 실험
    # ------------------------------------------------------------

    def cmd_ablate_mask(self, ratios: Optional[Sequence[float]] = None) -> pd.DataFrame:
        """
        가림 비율마다 같은 코퍼스/시드로 학습 -> 통계 -> 추론 -> 평가

        Returns:
            ratio,spe,s_alpha,e_phi,auroc 행 (ablate_mask.csv, ablate_mask.png 저장)
        """
        self._begin('ablate-mask')
        ratios = list(ratios or self.config.output.ablate_ratios)
        rows = []
        for idx, ratio in enumerate(ratios, 1):
            logger.info(f"[{idx}/{len(ratios)}] masking ratio = {ratio}")
            sub = replace(
                self.config,
                run_dir=str(self.run_dir / 'ablate_mask' / f"{idx:02d}_r{ratio}"),
                train=replace(self.config.train, masking_ratio=ratio),
                inference=replace(self.config.inference, masking_ratio=ratio),
            )
            runner = PipelineManager(sub)
            runner.cmd_train()
            runner.cmd_stats()
            runner.cmd_infer()
            report = runner.cmd_eval()
            rows.append({'ratio': ratio, **_metric_row(report)})

        df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        df.to_csv(self.run_dir / 'ablate_mask.csv', index=False, lineterminator='\n', float_format='%.8f')
        save_sweep_plot(df, self.run_dir / 'ablate_mask.png', title='metrics vs masking ratio')

        average = df[SWEEP_COLUMNS[1:]].mean(axis=1)
        for ratio, value in zip(df['ratio'], average):
            logger.info(f"    - r={ratio:.2f}: 지표 평균 {value:.4f}")
        logger.info(f"✓ 가림 비율 절제 실험 완료: 최고 r={df['ratio'][int(average.idxmax())]:.2f}")
        return df

    def cmd_ablate_standardise(self, checkpoint_path: Optional[PathLike] = None,
                               stats_path: Optional[PathLike] = None,
                               manifest_path: Optional[PathLike] = None) -> pd.DataFrame:
        """표준화 사용/미사용 추론을 각각 평가하고 차이 행 추가 (ablate_standardise.csv)"""
        self._begin('ablate-standardise')
        base = self.run_dir / 'ablate_standardise'
        rows = []
        for setting, flag in (('with', True), ('without', False)):
            out = base / setting
            self.cmd_infer(checkpoint_path, stats_path, manifest_path, standardise=flag, out_dir=out)
            report = self.cmd_eval(out / 'maps', manifest_path, out_dir=out / 'metrics')
            rows.append({'setting': setting, **_metric_row(report)})

        delta = {'setting': 'delta'}
        for column in COMPARISON_COLUMNS[1:]:
            delta[column] = rows[0][column] - rows[1][column]
        rows.append(delta)

        df = pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
        df.to_csv(self.run_dir / 'ablate_standardise.csv', index=False, lineterminator='\n', float_format='%.8f')
        logger.info(f"✓ 표준화 절제 실험: AUROC with={rows[0]['auroc']:.4f}, "
                    f"without={rows[1]['auroc']:.4f}, delta={delta['auroc']:+.4f}")
        return df

    def run_all(self, manifests: Optional[Iterable[PathLike]] = None) -> Dict[str, MetricsReport]:
        """
        학습 -> 통계 -> 테스트 매니페스트마다 추론/평가 (예: 도메인 안/밖 테스트 세트 비교)

        Returns:
            {매니페스트 이름: MetricsReport} (run_all.csv 에 매니페스트별 평균 저장)
        """
        self._begin('run-all')
        manifests = [Path(m) for m in (manifests or [self.config.corpus.test_manifest_path])]
        names = [m.stem for m in manifests]
        if len(set(names)) != len(names):
            raise ConfigError(f"테스트 매니페스트 이름이 겹칩니다: {names}")

        self.cmd_train()
        self.cmd_stats()
        reports, rows = {}, []
        for name, manifest in zip(names, manifests):
            out = self.run_dir / 'eval' / name
            self.cmd_infer(manifest_path=manifest, out_dir=out)
            reports[name] = self.cmd_eval(out / 'maps', manifest, out_dir=out / 'metrics')
            rows.append({'setting': name, **_metric_row(reports[name])})

        df = pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
        df.to_csv(self.run_dir / 'run_all.csv', index=False, lineterminator='\n', float_format='%.8f')
        for row in rows:
            logger.info(f"    - {row['setting']}: S_α={row['s_alpha']:.4f}, AUROC={row['auroc']:.4f}")
        logger.info(f"✓ 전체 실행 완료: 테스트 세트 {len(rows)}개")
        return reports
