"""합성 소형 코퍼스로 명령줄 명령 전체 실행 테스트"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from PIL import Image

import run_pipeline
from ood_mae.corpus import (image_id, load_image, load_mask, read_manifest, save_gray, synth_anomalous,
                            synth_healthy)
from ood_mae.corpus.image_io import to_uint8
from ood_mae.exceptions import (EXIT_CONTRACT, EXIT_IO, ArtifactMissing, ConfigError, DivergenceError,
                                ShapeError, exit_code_for)
from ood_mae.inference import infer_image, normalise_map, reconstruct_ood
from ood_mae.latent_stats import identity_stats, load_stats, save_stats
from ood_mae.model import load_checkpoint
from ood_mae.pipeline_manager import PipelineManager
from ood_mae.run_config import ECHO_FILENAME, load_run_config

MICRO = """\
MODEL_PATCH_SIZE=4
MODEL_RESOLUTION=16
MODEL_EMBED_DIM=16
MODEL_ENCODER_DEPTH=1
MODEL_ENCODER_HEADS=2
MODEL_DECODER_DIM=8
MODEL_DECODER_DEPTH=1
MODEL_DECODER_HEADS=2
TRAIN_EPOCHS=1
TRAIN_BATCH_SIZE=4
TRAIN_WARMUP_EPOCHS=0
TRAIN_NUM_WORKERS=1
OUTPUT_NUM_WORKERS=2
OUTPUT_SAVE_RAW_MAPS=true
"""


def _files(root: Path):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob('*') if p.is_file())


def _map_array(path):
    with Image.open(path) as img:
        return np.asarray(img)


@pytest.fixture(scope="module")
def mini(tmp_path_factory):
    """synth-corpus -> train -> stats -> infer -> eval (초소형 모델)"""
    root = tmp_path_factory.mktemp("mini")
    corpus = root / 'corpus'
    config = root / 'micro.env'
    config.write_text(MICRO + f"CORPUS_DIR={corpus.as_posix()}\n", encoding='utf-8')
    run = root / 'run'

    base = ['--config', str(config), '--run-dir', str(run)]
    assert run_pipeline.main(base + ['synth-corpus', '--n-healthy', '10', '--n-test-healthy', '2',
                                     '--n-anomalous', '3', '--n-out-domain', '2']) == 0
    for verb in ('train', 'stats', 'infer', 'eval'):
        assert run_pipeline.main(base + [verb]) == 0, verb
    return {'root': root, 'corpus': corpus, 'config': config, 'run': run, 'base': base}


class TestSynthCorpus:

    def test_counts_and_contract(self, tmp_path):
        out = tmp_path / 'corpus'
        code = run_pipeline.main(['--run-dir', str(tmp_path / 'run'), 'synth-corpus',
                                  '--n-healthy', '200', '--n-anomalous', '50', '--out-dir', str(out)])
        assert code == 0
        assert len(list((out / 'images').rglob('*.png'))) == 250
        assert len(list((out / 'masks').rglob('*.png'))) == 50
        assert sorted(p.name for p in out.glob('*.tsv')) == ['test.tsv', 'train.tsv']

        train = read_manifest(out / 'train.tsv')
        assert len(train) == 200
        assert not train.has_anomalous
        test = read_manifest(out / 'test.tsv')
        assert len(test.filter(label='anomalous')) == 50

    def test_same_seed_same_corpus(self, tmp_path):
        outs = []
        for name in ('a', 'b'):
            out = tmp_path / name
            args = ['--seed', '11', '--run-dir', str(tmp_path / f"run_{name}"), 'synth-corpus',
                    '--n-healthy', '6', '--n-anomalous', '3', '--out-dir', str(out)]
            assert run_pipeline.main(args) == 0
            outs.append(out)
        assert _files(outs[0]) == _files(outs[1])
        for rel in _files(outs[0]):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel

    def test_out_domain_manifest(self, mini):
        manifest = read_manifest(mini['corpus'] / 'test_out_domain.tsv')
        assert len(manifest) == 2
        assert all(e.label == 'anomalous' for e in manifest.entries)


class TestPipeline:

    def test_artifacts(self, mini):
        run = mini['run']
        for name in (ECHO_FILENAME, 'checkpoint.pt', 'loss_log.csv', 'latent_stats.npz', 'image_scores.csv'):
            assert (run / name).exists(), name
        assert load_stats(run / 'latent_stats.npz').mean.shape == (16,)

    def test_one_map_per_test_image(self, mini):
        test = read_manifest(mini['corpus'] / 'test.tsv')
        maps = sorted(p.stem for p in (mini['run'] / 'maps').glob('*.png'))
        assert maps == sorted(test.image_ids())
        assert len(list((mini['run'] / 'raw').glob('*.oodmap'))) == len(test)

    def test_png_is_rounded_normalised_score(self, mini):
        run = mini['run']
        config = load_run_config(run / ECHO_FILENAME)
        model = load_checkpoint(run / 'checkpoint.pt').to_model()
        stats = load_stats(run / 'latent_stats.npz')
        test = read_manifest(mini['corpus'] / 'test.tsv')
        entry = test.filter(label='anomalous')[0]

        img = load_image(test.resolve(entry.image_path), config.model.resolution)
        _, amap = infer_image(img, model, stats, config.inference)
        expected = to_uint8(normalise_map(amap).scores[0])
        np.testing.assert_array_equal(_map_array(run / 'maps' / f"{image_id(entry)}.png"), expected)

    def test_no_standardise_equals_identity_stats(self, mini, tmp_path):
        other = tmp_path / 'plain'
        code = run_pipeline.main(['--config', str(mini['config']), '--run-dir', str(other), '--no-standardise',
                                  'infer', '--checkpoint', str(mini['run'] / 'checkpoint.pt')])
        assert code == 0

        config = load_run_config(other / ECHO_FILENAME)
        assert config.standardise is False
        model = load_checkpoint(mini['run'] / 'checkpoint.pt').to_model()
        stats = identity_stats(model.config.embed_dim)
        test = read_manifest(mini['corpus'] / 'test.tsv')
        for entry in test.entries:
            img = load_image(test.resolve(entry.image_path), config.model.resolution)
            _, amap = infer_image(img, model, stats, config.inference)
            saved = _map_array(other / 'maps' / f"{image_id(entry)}.png")
            np.testing.assert_array_equal(saved, to_uint8(normalise_map(amap).scores[0]))

    def test_eval_outputs(self, mini):
        metrics = mini['run'] / 'metrics'
        per_image = pd.read_csv(metrics / 'per_image.csv')
        assert len(per_image) == len(read_manifest(mini['corpus'] / 'test.tsv'))
        summary = dict(line.split(': ', 1) for line in
                       (metrics / 'summary.txt').read_text(encoding='utf-8').splitlines())
        for key in ('max_spe', 's_alpha', 'max_ephi', 'auroc'):
            assert 0.0 <= float(summary[key]) <= 1.0
        assert len(pd.read_csv(metrics / 'threshold_curves.csv')) == 256

    def test_perfect_maps(self, mini, tmp_path):
        test = read_manifest(mini['corpus'] / 'test.tsv')
        maps = tmp_path / 'perfect'
        for key, entry in zip(test.image_ids(), test.entries):
            if entry.gt_path is None:
                gt = np.zeros((1, 16, 16), dtype=np.float32)
            else:
                gt = load_mask(test.resolve(entry.gt_path), 16).astype(np.float32)
            save_gray(gt, maps / f"{key}.png")

        config = load_run_config(mini['config'], {'RUN_DIR': str(tmp_path / 'run')})
        report = PipelineManager(config).cmd_eval(maps, mini['corpus'] / 'test.tsv')
        summary = report.summary()
        assert summary['s_alpha'] == pytest.approx(1.0, abs=1e-9)
        assert summary['max_ephi'] == pytest.approx(1.0, abs=1e-9)
        assert summary['max_spe'] == 1.0

    def test_missing_maps_listed(self, mini, tmp_path):
        test = read_manifest(mini['corpus'] / 'test.tsv')
        maps = tmp_path / 'partial'
        keep = test.image_ids()[1:]
        for key in keep:
            save_gray(np.zeros((1, 16, 16)), maps / f"{key}.png")

        config = load_run_config(mini['config'], {'RUN_DIR': str(tmp_path / 'run')})
        with pytest.raises(ArtifactMissing) as info:
            PipelineManager(config).cmd_eval(maps, mini['corpus'] / 'test.tsv')
        assert info.value.missing == [test.image_ids()[0]]

        code = run_pipeline.main(['--config', str(mini['config']), '--run-dir', str(tmp_path / 'run'),
                                  'eval', '--maps-dir', str(maps)])
        assert code == EXIT_IO

    def test_stats_reproducible(self, mini):
        first = load_stats(mini['run'] / 'latent_stats.npz')
        assert run_pipeline.main(mini['base'] + ['stats']) == 0
        again = load_stats(mini['run'] / 'latent_stats.npz')
        np.testing.assert_array_equal(again.mean, first.mean)
        np.testing.assert_array_equal(again.std, first.std)

    def test_incompatible_stats(self, mini, tmp_path):
        config = load_run_config(mini['config'], {'RUN_DIR': str(tmp_path / 'run')})
        bad = save_stats(identity_stats(32), tmp_path / 'bad.npz')
        with pytest.raises(ShapeError, match='bad.npz'):
            PipelineManager(config).cmd_infer(mini['run'] / 'checkpoint.pt', bad)


class TestAblations:

    def test_ablate_standardise(self, mini):
        code = run_pipeline.main(mini['base'] + ['ablate-standardise'])
        assert code == 0
        df = pd.read_csv(mini['run'] / 'ablate_standardise.csv')
        assert df['setting'].tolist() == ['with', 'without', 'delta']
        for column in ('spe', 's_alpha', 'e_phi', 'auroc'):
            assert df[column][2] == pytest.approx(df[column][0] - df[column][1], abs=1e-7)

    def test_ablate_mask(self, mini, tmp_path):
        run = tmp_path / 'sweep'
        code = run_pipeline.main(['--config', str(mini['config']), '--run-dir', str(run),
                                  'ablate-mask', '--ratios', '0.25', '0.5'])
        assert code == 0
        df = pd.read_csv(run / 'ablate_mask.csv')
        assert list(df.columns) == ['ratio', 'spe', 's_alpha', 'e_phi', 'auroc']
        assert df['ratio'].tolist() == [0.25, 0.5]
        assert ((df[['spe', 's_alpha', 'e_phi', 'auroc']] >= 0) & (df[['spe', 's_alpha', 'e_phi', 'auroc']] <= 1)).all().all()
        assert (run / 'ablate_mask.png').stat().st_size > 0
        assert sorted(p.name for p in (run / 'ablate_mask').iterdir()) == ['01_r0.25', '02_r0.5']

    def test_close_ratios_get_separate_runs(self, mini, tmp_path):
        run = tmp_path / 'close'
        code = run_pipeline.main(['--config', str(mini['config']), '--run-dir', str(run),
                                  'ablate-mask', '--ratios', '0.351', '0.349'])
        assert code == 0
        subs = sorted((run / 'ablate_mask').iterdir())
        assert [p.name for p in subs] == ['01_r0.351', '02_r0.349']
        for sub in subs:
            assert (sub / 'checkpoint.pt').exists()
            assert (sub / 'metrics' / 'summary.txt').exists()


class TestRunAll:

    def test_in_and_out_domain(self, mini, tmp_path):
        run = tmp_path / 'all'
        manifests = [mini['corpus'] / 'test.tsv', mini['corpus'] / 'test_out_domain.tsv']
        code = run_pipeline.main(['--config', str(mini['config']), '--run-dir', str(run),
                                  'run-all', '--manifests', *map(str, manifests)])
        assert code == 0
        df = pd.read_csv(run / 'run_all.csv')
        assert df['setting'].tolist() == ['test', 'test_out_domain']
        assert list(df.columns) == ['setting', 'spe', 's_alpha', 'e_phi', 'auroc']
        assert (run / 'checkpoint.pt').exists() and (run / 'latent_stats.npz').exists()
        for name, manifest in (('test', manifests[0]), ('test_out_domain', manifests[1])):
            assert (run / 'eval' / name / 'metrics' / 'summary.txt').exists()
            maps = sorted(p.stem for p in (run / 'eval' / name / 'maps').glob('*.png'))
            assert maps == sorted(read_manifest(manifest).image_ids())

    def test_duplicate_names_rejected(self, mini, tmp_path):
        config = load_run_config(mini['config'], {'RUN_DIR': str(tmp_path / 'run')})
        other = tmp_path / 'copy' / 'test.tsv'
        other.parent.mkdir()
        other.write_bytes((mini['corpus'] / 'test.tsv').read_bytes())
        with pytest.raises(ConfigError):
            PipelineManager(config).run_all([mini['corpus'] / 'test.tsv', other])
        assert not (tmp_path / 'run' / 'checkpoint.pt').exists()


class TestExitCodes:

    def test_mapping(self):
        assert exit_code_for(DivergenceError("nan")) == EXIT_CONTRACT
        assert exit_code_for(ShapeError("x")) == EXIT_CONTRACT
        assert exit_code_for(ArtifactMissing("x")) == EXIT_IO
        assert exit_code_for(FileNotFoundError("x")) == EXIT_IO

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / 'bad.env'
        config.write_text("TRAIN_EPOCH=3\n", encoding='utf-8')
        assert run_pipeline.main(['--config', str(config), '--run-dir', str(tmp_path), 'train']) == EXIT_CONTRACT

    def test_missing_checkpoint(self, tmp_path):
        assert run_pipeline.main(['--run-dir', str(tmp_path), 'stats']) == EXIT_IO

    def test_missing_manifest(self, tmp_path):
        code = run_pipeline.main(['--run-dir', str(tmp_path), 'train', '--manifest', str(tmp_path / 'nope.tsv')])
        assert code == EXIT_IO


@pytest.mark.slow
class TestDeskScaleAcceptance:
    """학습 200장 / 테스트 건강 50장 / 테스트 이상 50장, tiny 프리셋"""

    @pytest.fixture(scope="class")
    def desk(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("desk")
        config = root / 'desk.env'
        config.write_text("\n".join([
            f"CORPUS_DIR={(root / 'corpus').as_posix()}",
            "TRAIN_EPOCHS=150",
            "TRAIN_LEARNING_RATE=0.001",
            "TRAIN_WARMUP_EPOCHS=10",
        ]) + "\n", encoding='utf-8')
        run = root / 'run'
        base = ['--config', str(config), '--run-dir', str(run)]
        assert run_pipeline.main(base + ['synth-corpus', '--n-healthy', '250', '--n-test-healthy', '50',
                                         '--n-anomalous', '50']) == 0
        for verb in ('train', 'stats', 'infer', 'eval', 'ablate-standardise'):
            assert run_pipeline.main(base + [verb]) == 0, verb
        return {'root': root, 'config': config, 'run': run}

    def test_anomalous_images_score_higher(self, desk):
        scores = pd.read_csv(desk['run'] / 'image_scores.csv')
        means = scores.groupby('label')['score'].mean()
        assert means['anomalous'] > means['healthy']

    def test_pixel_auroc(self, desk):
        per_image = pd.read_csv(desk['run'] / 'metrics' / 'per_image.csv')
        anomalous = per_image[per_image['image_id'].str.contains('anomalous')]
        assert len(anomalous) == 50
        assert anomalous['auroc'].mean() >= 0.80

    def test_standardisation_does_not_hurt(self, desk):
        df = pd.read_csv(desk['run'] / 'ablate_standardise.csv').set_index('setting')
        assert df.loc['with', 'auroc'] >= df.loc['without', 'auroc'] - 0.02

    def test_mask_ratio_sweep(self, desk):
        run = desk['root'] / 'sweep'
        code = run_pipeline.main(['--config', str(desk['config']), '--run-dir', str(run),
                                  'ablate-mask', '--ratios', '0.15', '0.35', '0.55', '0.75'])
        assert code == 0
        df = pd.read_csv(run / 'ablate_mask.csv')
        assert len(df) == 4
        metrics = df[['spe', 's_alpha', 'e_phi', 'auroc']]
        assert np.isfinite(metrics.to_numpy()).all()
        assert metrics.mean(axis=1).nunique() > 1
        assert (run / 'ablate_mask.png').exists()

    def test_paired_reconstruction_error(self, desk):
        config = load_run_config(desk['run'] / ECHO_FILENAME)
        model = load_checkpoint(desk['run'] / 'checkpoint.pt').to_model()
        stats = load_stats(desk['run'] / 'latent_stats.npz')
        res = config.model.resolution

        healthy, anomalous = [], []
        for i in range(50):
            # 코퍼스 시드와 겹치지 않는 별도 시드
            seed = 10_000 + i
            clean = synth_healthy(seed, res)
            broken, _ = synth_anomalous(seed, res)
            healthy.append(np.abs(reconstruct_ood(clean, model, stats, config.inference) - clean).mean())
            anomalous.append(np.abs(reconstruct_ood(broken, model, stats, config.inference) - broken).mean())
        assert np.mean(healthy) < np.mean(anomalous)
