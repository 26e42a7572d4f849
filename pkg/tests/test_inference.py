import numpy as np
import pytest
import torch

from ood_mae.corpus import synth_anomalous, synth_healthy
from ood_mae.exceptions import ConfigError, DecodeError, ShapeError
from ood_mae.inference import (AnomalyMap, InferenceConfig, anomaly_score, image_score, infer_image,
                               normalise_map, read_raw_map, reconstruct_ood, write_raw_map)
from ood_mae.latent_stats import identity_stats
from ood_mae.model import init_model


@pytest.fixture
def model(micro_config):
    return init_model(micro_config, seed=0)


class TestAnomalyScore:

    def test_hot_pixel_pooling(self):
        img = np.zeros((3, 4, 4))
        recon = np.zeros((3, 4, 4))
        recon[:, 1, 1] = 1.0
        amap = anomaly_score(img, recon, InferenceConfig(pool_kernel=3))
        expected = np.outer([2, 1, 1, 0], [2, 1, 1, 0]) / 9.0
        np.testing.assert_allclose(amap.scores[0], expected, atol=1e-12)

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        cfg = InferenceConfig(pool_kernel=4)
        np.testing.assert_array_equal(anomaly_score(a, b, cfg).scores, anomaly_score(b, a, cfg).scores)
        assert anomaly_score(a, b, cfg).scores.min() >= 0

    def test_identical_inputs_give_zero(self):
        img = synth_healthy(0, 16)
        amap = anomaly_score(img, img, InferenceConfig())
        assert amap.shape == (1, 16, 16)
        assert amap.scores.max() == 0.0

    def test_kernel_one_is_channel_mean(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        amap = anomaly_score(a, b, InferenceConfig(pool_kernel=1))
        np.testing.assert_allclose(amap.scores[0], np.abs(a - b).mean(axis=0))

    def test_kernel_larger_than_image_is_clamped(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((3, 6, 6)), rng.random((3, 6, 6))
        big = anomaly_score(a, b, InferenceConfig(pool_kernel=50))
        same = anomaly_score(a, b, InferenceConfig(pool_kernel=6))
        np.testing.assert_array_equal(big.scores, same.scores)

    @pytest.mark.parametrize("kernel", [2, 3, 5, 8, 16])
    def test_pooling_never_raises_max(self, kernel):
        rng = np.random.default_rng(kernel)
        for _ in range(5):
            a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
            amap = anomaly_score(a, b, InferenceConfig(pool_kernel=kernel))
            assert amap.scores.max() <= np.abs(a - b).mean(axis=0).max() + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            anomaly_score(np.zeros((3, 8, 8)), np.zeros((3, 8, 4)), InferenceConfig())

    def test_map_rejects_bad_values(self):
        with pytest.raises(ShapeError):
            AnomalyMap(np.full((1, 4, 4), -1.0))
        with pytest.raises(ShapeError):
            AnomalyMap(np.full((1, 4, 4), np.nan))


class TestReconstruct:

    def test_range_and_shape(self, model, micro_config):
        img = synth_healthy(0, micro_config.resolution)
        recon = reconstruct_ood(img, model, None, InferenceConfig(num_mask_samples=3))
        assert recon.shape == img.shape
        assert recon.dtype == np.float32
        assert 0.0 <= recon.min() and recon.max() <= 1.0

    def test_deterministic_given_seed(self, model, micro_config):
        img = synth_healthy(0, micro_config.resolution)
        cfg = InferenceConfig(mask_seed=5, num_mask_samples=2)
        np.testing.assert_array_equal(reconstruct_ood(img, model, None, cfg),
                                      reconstruct_ood(img, model, None, cfg))

    def test_identity_stats_equal_no_stats(self, model, micro_config):
        img, _ = synth_anomalous(1, micro_config.resolution)
        cfg = InferenceConfig()
        stats = identity_stats(micro_config.embed_dim)
        np.testing.assert_array_equal(reconstruct_ood(img, model, stats, cfg),
                                      reconstruct_ood(img, model, None, cfg))

    def test_more_masks_lower_variance(self, model, micro_config):
        # 출력이 클램프 경계에 붙지 않도록 헤드 bias를 중간값으로
        with torch.no_grad():
            model.decoder_pred.bias.fill_(0.5)
        img = synth_healthy(4, micro_config.resolution)

        def spread(k):
            draws = np.stack([reconstruct_ood(img, model, None, InferenceConfig(num_mask_samples=k, mask_seed=s))
                              for s in range(20)])
            return draws.var(axis=0).mean()

        assert spread(8) < spread(1)

    def test_incompatible_stats(self, model, micro_config):
        img = synth_healthy(0, micro_config.resolution)
        with pytest.raises(ShapeError):
            reconstruct_ood(img, model, identity_stats(micro_config.embed_dim * 2), InferenceConfig())

    def test_restores_training_mode(self, model, micro_config):
        model.train()
        reconstruct_ood(synth_healthy(0, micro_config.resolution), model, None, InferenceConfig())
        assert model.training

    def test_infer_image(self, model, micro_config):
        img = synth_healthy(3, micro_config.resolution)
        recon, amap = infer_image(img, model, None, InferenceConfig(pool_kernel=4))
        assert amap.shape == (1, micro_config.resolution, micro_config.resolution)
        assert image_score(amap) == pytest.approx(float(amap.scores.mean()))

    @pytest.mark.parametrize("overrides", [
        {'masking_ratio': 1.0}, {'num_mask_samples': 0}, {'pool_kernel': 0}, {'stats_mode': 'pixel'},
    ])
    def test_invalid_config(self, overrides):
        with pytest.raises(ConfigError):
            InferenceConfig(**overrides).validate()


class TestMapFiles:

    def test_normalise(self):
        amap = AnomalyMap(np.array([[[1.0, 3.0], [2.0, 5.0]]]))
        np.testing.assert_allclose(normalise_map(amap).scores[0], [[0.0, 0.5], [0.25, 1.0]])
        assert normalise_map(AnomalyMap(np.full((1, 2, 2), 0.3))).scores.max() == 0.0

    def test_raw_map_roundtrip(self, tmp_path):
        scores = np.random.default_rng(0).random((1, 8, 8)).astype(np.float32).astype(np.float64)
        path = write_raw_map(AnomalyMap(scores), tmp_path / 'a.oodmap')
        assert path.read_bytes().startswith(b'OODMAP1\n')
        np.testing.assert_array_equal(read_raw_map(path).scores, scores)

    def test_raw_map_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.oodmap'
        path.write_bytes(b'NOTAMAP\n{}\n')
        with pytest.raises(DecodeError):
            read_raw_map(path)
