"""Cross entropy, focal, dice, and the composite loss."""

import numpy as np
import pytest

from ecenet.errors import DataError
from ecenet.gradcheck import grad_check
from ecenet.losses import (
    cross_entropy_loss,
    dice_loss,
    downsample_nearest,
    focal_loss,
    one_hot,
)
from ecenet.tensor import Tensor

from oracles import ref_cross_entropy, ref_dice, ref_focal


class TestCrossEntropy:
    def test_high_margin_near_zero(self, rng):
        gt = rng.integers(0, 3, (4, 4)).astype(np.int64)
        logits = np.zeros((3, 4, 4))
        np.put_along_axis(logits, gt[None], 30.0, axis=0)
        assert cross_entropy_loss(Tensor(logits), gt).item() < 1e-9

    def test_uniform_logits(self, rng):
        gt = rng.integers(0, 5, (3, 3)).astype(np.int64)
        loss = cross_entropy_loss(Tensor(np.zeros((5, 3, 3))), gt)
        assert loss.item() == pytest.approx(np.log(5.0), abs=1e-12)

    def test_random_vs_scalar_oracle(self, rng):
        logits = rng.standard_normal((3, 2, 2))
        gt = rng.integers(0, 3, (2, 2)).astype(np.int64)
        assert cross_entropy_loss(Tensor(logits), gt).item() == \
            pytest.approx(ref_cross_entropy(logits, gt), abs=1e-12)

    def test_ignore_label(self, rng):
        logits = rng.standard_normal((3, 2, 2))
        gt = np.array([[0, 255], [2, 255]], dtype=np.int64)
        kept = cross_entropy_loss(Tensor(logits), gt).item()
        assert kept == pytest.approx(ref_cross_entropy(logits, gt), abs=1e-12)

    def test_out_of_range_label(self, rng):
        with pytest.raises(DataError):
            cross_entropy_loss(Tensor(np.zeros((3, 2, 2))),
                               np.array([[0, 3], [1, 2]], dtype=np.int64))

    def test_gradient(self, rng):
        gt = rng.integers(0, 3, (2, 2)).astype(np.int64)
        assert grad_check(lambda x: cross_entropy_loss(x, gt),
                          Tensor(rng.standard_normal((3, 2, 2)))) < 1e-6


class TestFocal:
    def test_saturated_prediction(self, rng):
        y = (rng.uniform(size=(2, 4, 4)) > 0.5).astype(np.float64)
        logits = np.where(y == 1.0, 30.0, -30.0)
        assert focal_loss(Tensor(logits), y).item() < 1e-9

    def test_random_vs_scalar_oracle(self, rng):
        logits = rng.standard_normal((2, 4, 4)) * 2
        y = (rng.uniform(size=(2, 4, 4)) > 0.5).astype(np.float64)
        assert focal_loss(Tensor(logits), y, 2.0, 0.25).item() == \
            pytest.approx(ref_focal(logits, y, 2.0, 0.25), abs=1e-12)

    def test_gradient(self, rng):
        y = (rng.uniform(size=(2, 3, 3)) > 0.5).astype(np.float64)
        assert grad_check(lambda x: focal_loss(x, y),
                          Tensor(rng.standard_normal((2, 3, 3)))) < 1e-6


class TestDice:
    def test_saturated_prediction(self, rng):
        y = (rng.uniform(size=(2, 4, 4)) > 0.5).astype(np.float64)
        y[0, 0, 0] = 1.0  # keep both classes non-empty
        logits = np.where(y == 1.0, 30.0, -30.0)
        assert dice_loss(Tensor(logits), y).item() < 1e-3

    def test_zero_logits_empty_class_formula(self):
        # p = 0.5 everywhere, y = 0: term = eps / (0.5*HW + eps)
        y = np.zeros((1, 2, 2))
        loss = dice_loss(Tensor(np.zeros((1, 2, 2))), y, eps=1.0)
        assert loss.item() == pytest.approx(1.0 - 1.0 / (0.5 * 4 + 1.0), abs=1e-12)

    def test_random_vs_scalar_oracle(self, rng):
        logits = rng.standard_normal((2, 4, 4))
        y = (rng.uniform(size=(2, 4, 4)) > 0.5).astype(np.float64)
        assert dice_loss(Tensor(logits), y).item() == \
            pytest.approx(ref_dice(logits, y), abs=1e-12)

    def test_gradient(self, rng):
        y = (rng.uniform(size=(2, 3, 3)) > 0.5).astype(np.float64)
        assert grad_check(lambda x: dice_loss(x, y),
                          Tensor(rng.standard_normal((2, 3, 3)))) < 1e-6


class TestLabelHelpers:
    def test_downsample_nearest_exact_factor(self):
        labels = np.arange(64).reshape(8, 8)
        small = downsample_nearest(labels, 2, 2)
        np.testing.assert_array_equal(small, [[labels[2, 2], labels[2, 6]],
                                              [labels[6, 2], labels[6, 6]]])

    def test_one_hot_with_ignore(self):
        labels = np.array([[0, 255], [1, 2]], dtype=np.int64)
        planes, valid = one_hot(labels, 3)
        assert planes.shape == (3, 2, 2)
        np.testing.assert_array_equal(valid, [[True, False], [True, True]])
        assert planes[:, 0, 1].sum() == 0.0
        assert planes[0, 0, 0] == 1.0 and planes[1, 1, 0] == 1.0
        assert planes.sum() == 3.0
