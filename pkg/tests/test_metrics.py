"""분할 지표: 벡터화 구현을 반복문 기준 구현과 비교"""

import math

import numpy as np
import pandas as pd
import pytest

import metric_oracle as oracle
from ood_mae.metrics import (NUM_THRESHOLDS, MetricsReport, binarise, e_measure, e_measure_curve,
                             evaluate_dataset, evaluate_image, max_over_thresholds, pixel_auroc,
                             specificity, specificity_curve, structure_measure)


def _random_pairs(count=50, size=8, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        amap = rng.random((size, size))
        gt = (rng.random((size, size)) < rng.uniform(0.1, 0.6)).astype(np.uint8)
        gt[0, 0], gt[-1, -1] = 1, 0
        pairs.append((amap, gt))
    return pairs


@pytest.fixture(scope="module")
def pairs():
    return _random_pairs()


@pytest.fixture
def left_half():
    gt = np.zeros((64, 64), dtype=np.uint8)
    gt[:, :32] = 1
    return gt


class TestOracleEquivalence:

    def test_specificity_curve_exact(self, pairs):
        for amap, gt in pairs:
            expected = [oracle.specificity(binarise(amap, t), gt) for t in range(NUM_THRESHOLDS)]
            np.testing.assert_array_equal(specificity_curve(amap, gt), expected)

    def test_e_measure_curve(self, pairs):
        for amap, gt in pairs:
            expected = [oracle.e_measure(binarise(amap, t), gt) for t in range(NUM_THRESHOLDS)]
            np.testing.assert_allclose(e_measure_curve(amap, gt), expected, rtol=0, atol=1e-9)

    def test_structure_measure(self, pairs):
        for amap, gt in pairs:
            assert structure_measure(amap, gt) == pytest.approx(oracle.structure_measure(amap, gt), abs=1e-9)

    def test_auroc(self, pairs):
        for amap, gt in pairs:
            assert pixel_auroc(amap, gt) == pytest.approx(oracle.auroc(amap, gt), abs=1e-12)

    def test_single_threshold_functions(self, pairs):
        amap, gt = pairs[0]
        pred = binarise(amap, 128)
        assert specificity(pred, gt) == oracle.specificity(pred, gt)
        assert e_measure(pred, gt) == pytest.approx(oracle.e_measure(pred, gt), abs=1e-9)


class TestPerfectPrediction:

    def test_all_metrics_one(self, left_half):
        amap = left_half.astype(np.float64)
        assert max_over_thresholds('spe', amap, left_half)[0] == 1.0
        assert max_over_thresholds('ephi', amap, left_half)[0] == pytest.approx(1.0, abs=1e-9)
        assert structure_measure(amap, left_half) == pytest.approx(1.0, abs=1e-9)
        assert pixel_auroc(amap, left_half) == 1.0

    def test_inverted_map_scores_low(self, left_half):
        amap = 1.0 - left_half.astype(np.float64)
        s = structure_measure(amap, left_half)
        assert s < 0.5
        assert s == pytest.approx(oracle.structure_measure(amap, left_half), abs=1e-9)
        assert pixel_auroc(amap, left_half) == 0.0


class TestThresholdProtocol:

    def test_curves_have_256_points(self, pairs):
        amap, gt = pairs[1]
        for metric in ('spe', 'ephi'):
            best, curve = max_over_thresholds(metric, amap, gt)
            assert curve.shape == (256,)
            assert best == curve.max()

    def test_t255_predicts_nothing(self, pairs):
        amap, gt = pairs[2]
        assert binarise(np.ones((8, 8)), 255).sum() == 0
        assert specificity_curve(amap, gt)[255] == 1.0
        # 예측이 전부 0이면 정렬 행렬 값이 모두 0 -> (0 + 1)^2 / 4
        assert e_measure_curve(amap, gt)[255] == pytest.approx(0.25)

    def test_t0_includes_any_nonzero_score(self):
        amap = np.array([[0.0, 1 / 255], [0.001, 0.5]])
        np.testing.assert_array_equal(binarise(amap, 0), [[0, 1], [0, 1]])

    def test_rounding_matches_png_quantisation(self):
        amap = np.array([[0.5, 128.4 / 255]])
        # round(127.5) = 128 (짝수 반올림), round(128.4) = 128
        np.testing.assert_array_equal(binarise(amap, 127), [[1, 1]])
        np.testing.assert_array_equal(binarise(amap, 128), [[0, 0]])

    @pytest.mark.parametrize("t", [-1, 256, 3.5])
    def test_invalid_threshold(self, t):
        with pytest.raises(ValueError):
            binarise(np.zeros((4, 4)), t)


class TestEdgeCases:

    def test_auroc_example(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.2]])
        gt = np.array([[1, 0], [0, 1]])
        assert pixel_auroc(scores, gt) == pytest.approx(0.75)

    def test_auroc_undefined_for_single_class(self):
        assert math.isnan(pixel_auroc(np.random.default_rng(0).random((4, 4)), np.zeros((4, 4))))

    def test_empty_gt_structure_measure(self):
        amap = np.full((8, 8), 0.25)
        assert structure_measure(amap, np.zeros((8, 8))) == pytest.approx(0.75)

    def test_full_gt_structure_measure(self):
        amap = np.full((8, 8), 0.25)
        assert structure_measure(amap, np.ones((8, 8))) == pytest.approx(0.25)

    def test_spe_without_background(self):
        assert specificity(np.ones((4, 4)), np.ones((4, 4))) == 1.0

    def test_channel_first_maps_accepted(self, pairs):
        amap, gt = pairs[3]
        assert structure_measure(amap[None], gt[None]) == structure_measure(amap, gt)


class TestReport:

    def test_dataset_order_and_files(self, pairs, tmp_path):
        items = [(f"img_{i:02d}", amap, gt) for i, (amap, gt) in enumerate(pairs[:6])]
        items.append(("healthy_00", np.zeros((8, 8)), np.zeros((8, 8), dtype=np.uint8)))
        report = evaluate_dataset(items, max_workers=3)

        assert [m.image_id for m in report.images] == [it[0] for it in items]
        assert report.undefined_auroc == ["healthy_00"]

        summary = report.summary()
        assert summary['num_images'] == 7
        for key in ('max_spe', 's_alpha', 'max_ephi', 'auroc'):
            assert 0.0 <= summary[key] <= 1.0
        aurocs = [pixel_auroc(a, g) for _, a, g in items[:6]]
        assert summary['auroc'] == pytest.approx(np.mean(aurocs))

        paths = report.save(tmp_path)
        per_image = pd.read_csv(paths['per_image'])
        assert list(per_image.columns) == ['image_id', 'max_spe', 's_alpha', 'max_ephi', 'auroc']
        assert len(per_image) == 7
        assert len(pd.read_csv(paths['curves'])) == NUM_THRESHOLDS
        assert len(pd.read_csv(paths['curves_per_image'])) == 7 * NUM_THRESHOLDS
        assert 'num_images: 7' in paths['summary'].read_text(encoding='utf-8')

    def test_image_metrics_diagnostics(self, pairs):
        amap, gt = pairs[4]
        m = evaluate_image("x", amap, gt)
        assert m.spe_at_best_ephi == m.spe_curve[int(np.argmax(m.ephi_curve))]
        assert m.mean_ephi == pytest.approx(m.ephi_curve.mean())

    def test_empty_report_summary(self):
        assert MetricsReport().summary() == {}
