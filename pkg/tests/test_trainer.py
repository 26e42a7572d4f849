import numpy as np
import pandas as pd
import pytest
import torch

from ood_mae.corpus import DatasetManifest, ManifestEntry, synth_healthy
from ood_mae.exceptions import ConfigError, ContractViolation, DivergenceError, ShapeError
from ood_mae.model import ModelPresets, init_model, load_checkpoint, visible_ids_tensor
from ood_mae.patchgrid import sample_mask
from ood_mae.trainer import (TrainConfig, Trainer, grad_check, param_groups, reconstruction_loss,
                             train)


def _images(config, count, offset=0):
    return torch.from_numpy(np.stack([synth_healthy(offset + i, config.resolution) for i in range(count)]))


@pytest.fixture
def quick():
    return TrainConfig(batch_size=4, epochs=2, warmup_epochs=1, learning_rate=1e-3, num_workers=1)


class TestLoss:

    def test_examples(self):
        assert reconstruction_loss(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == 1.0
        assert reconstruction_loss(np.full((3, 4, 4), 0.5), np.full((3, 4, 4), 0.5)) == 0.0
        a = torch.zeros(2, 3, 4, 4, requires_grad=True)
        loss = reconstruction_loss(a, torch.full((2, 3, 4, 4), 0.5))
        assert float(loss) == pytest.approx(0.25)
        loss.backward()
        assert a.grad is not None

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestConfig:

    @pytest.mark.parametrize("overrides", [
        {'masking_ratio': 0.0}, {'masking_ratio': 1.0}, {'epochs': 0}, {'batch_size': 0}, {'learning_rate': 0.0},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides).validate()

    def test_no_decay_groups(self, micro_config):
        model = init_model(micro_config, seed=0)
        decay, no_decay = param_groups(model, 0.05)
        assert decay['weight_decay'] == 0.05 and no_decay['weight_decay'] == 0.0
        assert any(p is model.mask_token for p in no_decay['params'])
        assert any(p is model.patch_embed.weight for p in decay['params'])
        assert all(p.ndim >= 2 for p in decay['params'])


class TestTrainer:

    def test_fit_writes_artifacts(self, micro_config, quick, tmp_path):
        trainer = Trainer(micro_config, quick, run_dir=tmp_path)
        ckpt = trainer.fit(_images(micro_config, 8))
        assert ckpt.epoch == 2
        log = pd.read_csv(tmp_path / 'loss_log.csv')
        assert list(log.columns) == ['epoch', 'step', 'loss', 'lr']
        assert len(log) == 2 * 2
        assert log['step'].tolist() == [0, 1, 2, 3]
        assert np.isfinite(log['loss']).all()
        assert load_checkpoint(tmp_path / 'checkpoint.pt').epoch == 2
        assert len(trainer.epoch_means()) == 2

    def test_deterministic(self, micro_config, quick):
        images = _images(micro_config, 8)
        a = Trainer(micro_config, quick).fit(images)
        b = Trainer(micro_config, quick).fit(images)
        assert all(torch.equal(a.state_dict[k], b.state_dict[k]) for k in a.state_dict)

    def test_warmup_then_decay(self, micro_config, tmp_path):
        cfg = TrainConfig(batch_size=4, epochs=4, warmup_epochs=2, learning_rate=1e-3, num_workers=1)
        trainer = Trainer(micro_config, cfg, run_dir=tmp_path)
        trainer.fit(_images(micro_config, 8))
        lr = [row['lr'] for row in trainer.history]
        assert lr[0] == 0.0
        assert max(lr) == pytest.approx(1e-3)
        assert lr[-1] < max(lr)

    def test_divergence_keeps_last_good(self, micro_config, quick, tmp_path):
        images = _images(micro_config, 4)
        images[0, 0, 0, 0] = float('nan')
        with pytest.raises(DivergenceError) as info:
            Trainer(micro_config, quick, run_dir=tmp_path).fit(images)
        assert info.value.last_good_path == tmp_path / 'checkpoint.pt'
        assert load_checkpoint(info.value.last_good_path).epoch == 0

    def test_exploding_update_keeps_finite_checkpoint(self, micro_config, tmp_path):
        images = _images(micro_config, 4)
        cfg = TrainConfig(batch_size=4, epochs=3, warmup_epochs=0, learning_rate=1e25, num_workers=1)
        with pytest.raises(DivergenceError) as info:
            Trainer(micro_config, cfg, run_dir=tmp_path).fit(images)

        model = load_checkpoint(info.value.last_good_path).to_model()
        assert all(torch.isfinite(p).all() for p in model.parameters())
        ids = visible_ids_tensor([sample_mask(micro_config.num_patches, 0.35, i) for i in range(4)])
        with torch.no_grad():
            assert np.isfinite(float(reconstruction_loss(model(images, ids), images)))

    def test_masked_pixel_gradient_is_target_only(self, micro_config):
        model = init_model(micro_config, seed=0).double()
        x = torch.from_numpy(synth_healthy(4, micro_config.resolution).astype(np.float64))[None]
        x.requires_grad_(True)
        mask = sample_mask(micro_config.num_patches, 0.5, seed=3)
        recon = model(x, visible_ids_tensor([mask]))
        reconstruction_loss(recon, x).backward()

        # d/dX mean((R - X)^2) 에서 R을 상수로 둔 항만 남아야 함
        target_only = (-2.0 * (recon - x) / x.numel()).detach()
        p, gw = micro_config.patch_size, micro_config.grid_shape[1]
        for k in mask.masked_indices:
            r, c = divmod(int(k), gw)
            block = (0, slice(None), slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p))
            np.testing.assert_allclose(x.grad[block].numpy(), target_only[block].numpy(), rtol=1e-10, atol=1e-15)

        r, c = divmod(int(mask.visible_indices[0]), gw)
        block = (0, slice(None), slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p))
        assert not np.allclose(x.grad[block].numpy(), target_only[block].numpy(), rtol=1e-10, atol=1e-15)

    def test_wrong_image_shape(self, micro_config, quick):
        with pytest.raises(ShapeError):
            Trainer(micro_config, quick).fit(torch.zeros(2, 3, 8, 8))

    def test_rejects_non_training_manifest(self, micro_config, quick):
        manifest = DatasetManifest([ManifestEntry('a.png', None, 'test', 'healthy')])
        with pytest.raises(ContractViolation):
            train(manifest, micro_config, quick)


class TestGradCheck:

    def test_tiny_preset(self):
        report = grad_check(ModelPresets.create('tiny'), seed=0, num_params=20)
        assert len(report.entries) == 20
        assert report.max_rel_error < 1e-3

    def test_zero_head_edge(self, micro_config):
        report = grad_check(micro_config, seed=1, num_params=10, zero_head=True,
                            param_names=['decoder_pred.weight', 'decoder_pred.bias'])
        assert report.max_rel_error < 1e-3
        assert any(abs(e.analytic) > 0 for e in report.entries)

    def test_zero_image_zero_head_bias(self, micro_config):
        # 출력 = bias 인 2차 손실, 0 입력에서 해석적/수치 기울기 모두 정확히 0
        report = grad_check(micro_config, seed=2, num_params=8, zero_head=True, zero_image=True,
                            param_names=['decoder_pred.bias'])
        assert all(e.name == 'decoder_pred.bias' for e in report.entries)
        assert all(e.analytic == e.numeric == 0.0 for e in report.entries)
        assert report.max_rel_error == 0.0

    def test_unknown_param_names(self, micro_config):
        with pytest.raises(ConfigError):
            grad_check(micro_config, seed=0, num_params=1, param_names=['nope'])


@pytest.mark.slow
def test_overfit_small_corpus():
    config = ModelPresets.create('tiny')
    cfg = TrainConfig(batch_size=10, epochs=300, warmup_epochs=10, learning_rate=1e-3, num_workers=1)
    trainer = Trainer(config, cfg)
    trainer.fit(_images(config, 50))
    assert trainer.epoch_means()[-1] < 0.01
