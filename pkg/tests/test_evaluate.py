"""Confusion-matrix mIoU against hand counts and brute-force set IoU."""

import numpy as np
import pytest

from ecenet.errors import ContractError
from ecenet.evaluate import ConfusionMatrix

from oracles import ref_miou


class TestConfusionMatrix:
    def test_perfect_prediction(self, rng):
        gt = rng.integers(0, 3, (8, 8))
        cm = ConfusionMatrix(3)
        cm.update(gt, gt)
        per_class, miou = cm.iou()
        assert miou == 1.0
        np.testing.assert_array_equal(per_class[~np.isnan(per_class)], 1.0)

    def test_disjoint_prediction(self):
        gt = np.array([0, 0, 1, 1])
        pred = np.array([1, 1, 0, 0])
        cm = ConfusionMatrix(2)
        cm.update(gt, pred)
        _, miou = cm.iou()
        assert miou == 0.0

    def test_hand_case_seven_twelfths(self):
        # gt=[0,0,1,1], pred=[0,1,1,1]: IoU0=1/2, IoU1=2/3, mIoU=7/12
        cm = ConfusionMatrix(2)
        cm.update(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
        per_class, miou = cm.iou()
        assert per_class[0] == pytest.approx(0.5)
        assert per_class[1] == pytest.approx(2.0 / 3.0)
        assert miou == pytest.approx(7.0 / 12.0)

    def test_sample_order_invariance(self, rng):
        maps = [(rng.integers(0, 3, (4, 4)), rng.integers(0, 3, (4, 4)))
                for _ in range(5)]
        cm1 = ConfusionMatrix(3)
        for gt, pred in maps:
            cm1.update(gt, pred)
        cm2 = ConfusionMatrix(3)
        for gt, pred in reversed(maps):
            cm2.update(gt, pred)
        np.testing.assert_array_equal(cm1.counts, cm2.counts)

    def test_matches_bruteforce_on_random_micromaps(self):
        for seed in range(10):
            r = np.random.default_rng(seed)
            gt = r.integers(0, 4, (5, 5))
            pred = r.integers(0, 4, (5, 5))
            cm = ConfusionMatrix(4)
            cm.update(gt, pred)
            _, miou = cm.iou()
            assert miou == ref_miou(gt, pred, 4)

    def test_ignore_label_excluded(self):
        gt = np.array([0, 255, 1, 255])
        pred = np.array([0, 0, 1, 1])
        cm = ConfusionMatrix(2)
        cm.update(gt, pred)
        assert cm.counts.sum() == 2
        _, miou = cm.iou()
        assert miou == 1.0

    def test_absent_class_excluded_from_mean(self):
        gt = np.array([0, 0, 0, 0])
        pred = np.array([0, 0, 1, 1])
        cm = ConfusionMatrix(3)
        cm.update(gt, pred)
        per_class, miou = cm.iou()
        assert np.isnan(per_class[1]) and np.isnan(per_class[2])
        assert miou == pytest.approx(0.5)

    def test_no_present_class_rejected(self):
        cm = ConfusionMatrix(2)
        with pytest.raises(ContractError):
            cm.iou()
