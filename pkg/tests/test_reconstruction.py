"""Feature reconstruction and diversity loss."""

import numpy as np
import pytest

from ecenet.blocks import ParamFactory, se_forward
from ecenet import ops
from ecenet.errors import ConfigError
from ecenet.gradcheck import grad_check
from ecenet.reconstruction import diversity_loss, fr_forward, make_fr_params
from ecenet.tensor import Tensor

from oracles import ref_diversity


class TestFRForward:
    def test_zero_input_gives_fuse_bias_map(self, rng):
        factory = ParamFactory(rng, np.float64)
        p = make_fr_params(factory, 4, se_ratio=2)
        out = fr_forward(Tensor(np.zeros((4, 3, 3))), p)
        np.testing.assert_array_equal(out.y_diverse.data, np.zeros((2, 3, 3)))
        expected = np.broadcast_to(p.fuse.bias.data[:, None, None], (4, 3, 3))
        np.testing.assert_allclose(out.y.data, expected, atol=1e-15)

    def test_identity_fuse_reproduces_concat(self, rng):
        factory = ParamFactory(rng, np.float64)
        p = make_fr_params(factory, 4, se_ratio=2)
        p.fuse.weight.assign(np.eye(4))
        p.fuse.bias.assign(np.zeros(4))
        f = rng.standard_normal((4, 2, 2))
        out = fr_forward(Tensor(f), p)
        y_prime = ops.channel_norm(
            ops.conv1x1(Tensor(f), p.intrinsic.weight, p.intrinsic.bias),
            p.norm.gamma, p.norm.beta).data
        np.testing.assert_allclose(out.y.data[:2], y_prime, atol=1e-12)
        np.testing.assert_allclose(out.y.data[2:], out.y_diverse.data, atol=1e-12)

    def test_random_vs_composed_oracle(self, rng):
        factory = ParamFactory(rng, np.float64)
        p = make_fr_params(factory, 4, se_ratio=2)
        f = rng.standard_normal((4, 2, 2))
        out = fr_forward(Tensor(f), p)
        y_prime = ops.channel_norm(
            ops.conv1x1(Tensor(f), p.intrinsic.weight, p.intrinsic.bias),
            p.norm.gamma, p.norm.beta)
        y_div = se_forward(ops.dwconv3x3(y_prime, p.cheap), p.se)
        y = ops.conv1x1(ops.concat([y_prime, y_div], axis=0),
                        p.fuse.weight, p.fuse.bias)
        np.testing.assert_allclose(out.y.data, y.data, atol=1e-12)
        np.testing.assert_allclose(out.y_diverse.data, y_div.data, atol=1e-12)

    def test_spatial_shape_preserved(self, rng):
        factory = ParamFactory(rng, np.float64)
        p = make_fr_params(factory, 6, se_ratio=2)
        out = fr_forward(Tensor(rng.standard_normal((6, 5, 7))), p)
        assert out.y.shape == (6, 5, 7)
        assert out.y_diverse.shape == (3, 5, 7)

    def test_odd_channels_rejected_at_construction(self, rng):
        with pytest.raises(ConfigError):
            make_fr_params(ParamFactory(rng, np.float64), 5)

    def test_gradient(self, rng):
        factory = ParamFactory(rng, np.float64)
        p = make_fr_params(factory, 4, se_ratio=2)
        proj = Tensor(rng.standard_normal((4, 2, 2)))

        def f(x):
            return ops.sum(ops.mul(fr_forward(x, p).y, proj))

        assert grad_check(f, Tensor(rng.standard_normal((4, 2, 2)))) < 1e-6


class TestDiversityLoss:
    def test_constant_input_analytic(self):
        assert diversity_loss(Tensor(np.full((4, 4, 4), 2.0))).item() == \
            pytest.approx(0.75, abs=1e-12)

    def test_single_pixel(self):
        assert diversity_loss(Tensor(np.zeros((2, 1, 1)))).item() == \
            pytest.approx(0.5, abs=1e-15)

    def test_distinct_peak_saturation(self):
        y = np.zeros((2, 2, 2))
        y[0].flat[0] = 100.0
        y[1].flat[1] = 100.0
        assert diversity_loss(Tensor(y)).item() < 1e-10

    def test_random_vs_direct_formula(self, rng):
        y = rng.standard_normal((3, 2, 2))
        assert diversity_loss(Tensor(y)).item() == \
            pytest.approx(ref_diversity(y), abs=1e-12)

    def test_range_and_constant_value(self, rng):
        for seed in range(20):
            y = np.random.default_rng(seed).standard_normal((5, 3, 4)) * 4
            val = diversity_loss(Tensor(y)).item()
            assert 0.0 <= val < 1.0
        assert diversity_loss(Tensor(np.full((5, 3, 4), -1.3))).item() == \
            pytest.approx(1.0 - 1.0 / 5.0, abs=1e-12)

    def test_per_channel_shift_invariance(self, rng):
        y = rng.standard_normal((3, 2, 3))
        shifted = y + rng.standard_normal((3, 1, 1)) * 10
        a = diversity_loss(Tensor(y)).item()
        b = diversity_loss(Tensor(shifted)).item()
        assert abs(a - b) < 1e-9

    def test_monotone_decrease_along_peak_family(self):
        rng = np.random.default_rng(7)
        c, hw = 3, 9
        d = np.zeros((c, 3, 3))
        slots = rng.choice(hw, size=c, replace=False)
        for j in range(c):
            d[j].flat[slots[j]] = 1.0
        values = [diversity_loss(Tensor(t * d)).item() for t in (0.0, 1.0, 5.0, 25.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_gradient(self, rng):
        assert grad_check(diversity_loss,
                          Tensor(rng.standard_normal((3, 2, 3)))) < 1e-6
