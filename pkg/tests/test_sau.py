"""Semantics attention, similarity-as-mask, and the gated class updater."""

import numpy as np
import pytest

from ecenet.blocks import ParamFactory
from ecenet import ops
from ecenet.errors import DimensionError
from ecenet.extraction import ClassEmbeddings, ece_extract, make_ece_params
from ecenet.gradcheck import grad_check
from ecenet.sau import (
    class_update,
    make_sau_params,
    naive_plus_update,
    sau_step,
    semantics_attention,
    similarity_to_mask,
)
from ecenet.tensor import Tensor, parameters_of

from oracles import ref_class_update


def _sau(rng, width=8, heads=2, levels=(1, 2), stage=3):
    factory = ParamFactory(rng, np.float64)
    ece = make_ece_params(factory, width, levels)
    return make_sau_params(factory, width, heads, ece, stage=stage)


def _zero_params(p):
    for _, t in parameters_of(p):
        t.assign(np.zeros_like(t.data))


class TestSemanticsAttention:
    def test_zero_weights_residual_identity(self, rng):
        p = _sau(rng)
        _zero_params(p)
        x = rng.standard_normal((4, 8))
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        enhanced, _ = semantics_attention(Tensor(x), g, p, 2, 2)
        np.testing.assert_array_equal(enhanced.data, x)

    def test_identical_embedding_rows(self, rng):
        p = _sau(rng)
        x = rng.standard_normal((4, 8))
        row = rng.standard_normal(8)
        g = ClassEmbeddings(Tensor(np.tile(row, (3, 1))))
        _, sim = semantics_attention(Tensor(x), g, p, 2, 2)
        # identical rows map to identical keys: similarity columns coincide
        np.testing.assert_allclose(sim.data[:, 0], sim.data[:, 1], atol=1e-12)
        np.testing.assert_allclose(sim.data[:, 1], sim.data[:, 2], atol=1e-12)

    def test_random_vs_component_composition(self, rng):
        from ecenet.blocks import mlp_forward, scaled_attention

        p = _sau(rng)
        x = Tensor(rng.standard_normal((4, 8)))
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        enhanced, sim = semantics_attention(x, g, p, 2, 2)

        xn = ops.layernorm(x, p.norm_feat.gamma, p.norm_feat.beta)
        gn = ops.layernorm(g.g, p.norm_embed.gamma, p.norm_embed.beta)
        attn_out, sim_ref = scaled_attention(xn, gn, p.attention)
        x1 = ops.add(x, attn_out)
        ref = ops.add(x1, mlp_forward(
            ops.layernorm(x1, p.norm_mlp.gamma, p.norm_mlp.beta), p.mlp, 2, 2))
        np.testing.assert_allclose(enhanced.data, ref.data, atol=1e-12)
        np.testing.assert_allclose(sim.data, sim_ref.data, atol=1e-12)

    def test_bad_grid(self, rng):
        p = _sau(rng)
        g = ClassEmbeddings(Tensor(np.zeros((3, 8))))
        with pytest.raises(DimensionError):
            semantics_attention(Tensor(np.zeros((5, 8))), g, p, 2, 2)


class TestSimilarityToMask:
    def test_single_position(self, rng):
        sim = rng.standard_normal((1, 4))
        m = similarity_to_mask(Tensor(sim), 1, 1)
        assert m.logits.shape == (4, 1, 1)
        np.testing.assert_array_equal(m.logits.data[:, 0, 0], sim[0])

    def test_round_trip(self, rng):
        sim = rng.standard_normal((6, 3))
        m = similarity_to_mask(Tensor(sim), 2, 3)
        back = ops.transpose(ops.reshape(m.logits, (3, 6)))
        np.testing.assert_array_equal(back.data, sim)

    def test_index_identity(self, rng):
        sim = rng.standard_normal((4, 3))
        m = similarity_to_mask(Tensor(sim), 2, 2).logits.data
        for n in range(3):
            for i in range(2):
                for j in range(2):
                    assert m[n, i, j] == sim[i * 2 + j, n]


class TestClassUpdate:
    def test_zero_psi2_identity(self, rng):
        p = _sau(rng)
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        g_hat = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        out = class_update(g, g_hat, p)
        np.testing.assert_array_equal(out.g.data, g.g.data)

    def test_gate_saturation_low(self, rng):
        p = _sau(rng)
        # psi2 off zero so the gated term would be visible if the gate opened
        p.psi2.weight.assign(rng.standard_normal(p.psi2.weight.shape))
        p.psi1.weight.assign(np.zeros_like(p.psi1.weight.data))
        p.psi1.bias.assign(np.zeros_like(p.psi1.bias.data))
        p.psi1_norm.beta.assign(np.full(8, -30.0))
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        g_hat = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        out = class_update(g, g_hat, p)
        assert np.abs(out.g.data - g.g.data).max() < 1e-9

    def test_random_vs_scalar_oracle(self, rng):
        p = _sau(rng)
        p.psi2.weight.assign(rng.standard_normal(p.psi2.weight.shape) * 0.3)
        p.psi2.bias.assign(rng.standard_normal(8) * 0.1)
        g = rng.standard_normal((3, 8))
        g_hat = rng.standard_normal((3, 8))
        out = class_update(ClassEmbeddings(Tensor(g)),
                           ClassEmbeddings(Tensor(g_hat)), p)
        expected = ref_class_update(g, g_hat, {
            "w3": p.phi3.weight.data, "b3": p.phi3.bias.data,
            "w4": p.phi4.weight.data, "b4": p.phi4.bias.data,
            "wp1": p.psi1.weight.data, "bp1": p.psi1.bias.data,
            "g1": p.psi1_norm.gamma.data, "be1": p.psi1_norm.beta.data,
            "wp2": p.psi2.weight.data, "bp2": p.psi2.bias.data,
            "g2": p.psi2_norm.gamma.data, "be2": p.psi2_norm.beta.data,
        })
        np.testing.assert_allclose(out.g.data, expected, atol=1e-12)

    def test_naive_plus(self, rng):
        g = rng.standard_normal((3, 8))
        g_hat = rng.standard_normal((3, 8))
        out = naive_plus_update(ClassEmbeddings(Tensor(g)),
                                ClassEmbeddings(Tensor(g_hat)))
        np.testing.assert_array_equal(out.g.data, g + g_hat)

    def test_shape_mismatch(self, rng):
        p = _sau(rng)
        with pytest.raises(DimensionError):
            class_update(ClassEmbeddings(Tensor(np.zeros((3, 8)))),
                         ClassEmbeddings(Tensor(np.zeros((4, 8)))), p)


class TestSAUStep:
    def test_zero_psi2_keeps_g(self, rng):
        p = _sau(rng)
        x = Tensor(rng.standard_normal((4, 8)))
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        out = sau_step(x, g, p, 2, 2)
        np.testing.assert_array_equal(out.updated_g.g.data, g.g.data)
        assert out.new_mask.logits.shape == (3, 2, 2)
        assert out.enhanced.shape == (4, 8)

    def test_all_zero_params(self, rng):
        p = _sau(rng)
        _zero_params(p)
        x = rng.standard_normal((4, 8))
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        out = sau_step(Tensor(x), g, p, 2, 2)
        np.testing.assert_array_equal(out.enhanced.data, x)
        np.testing.assert_array_equal(out.new_mask.logits.data,
                                      np.zeros((3, 2, 2)))
        np.testing.assert_array_equal(out.updated_g.g.data, g.g.data)

    def test_random_vs_component_composition(self, rng):
        p = _sau(rng)
        p.psi2.weight.assign(rng.standard_normal(p.psi2.weight.shape) * 0.2)
        x = Tensor(rng.standard_normal((4, 8)))
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        out = sau_step(x, g, p, 2, 2)

        enhanced, sim = semantics_attention(x, g, p, 2, 2)
        mask = similarity_to_mask(sim, 2, 2, stage=p.stage)
        g_hat = ece_extract(mask, p.ece)
        updated = class_update(g, g_hat, p)
        np.testing.assert_allclose(out.enhanced.data, enhanced.data, atol=1e-12)
        np.testing.assert_allclose(out.new_mask.logits.data, mask.logits.data,
                                   atol=1e-12)
        np.testing.assert_allclose(out.updated_g.g.data, updated.g.data,
                                   atol=1e-12)

    def test_joint_class_permutation_equivariance(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            p = _sau(rng)
            p.psi2.weight.assign(rng.standard_normal(p.psi2.weight.shape) * 0.2)
            x = Tensor(rng.standard_normal((4, 8)))
            g_rows = rng.standard_normal((5, 8))
            perm = rng.permutation(5)
            out1 = sau_step(x, ClassEmbeddings(Tensor(g_rows)), p, 2, 2)
            out2 = sau_step(x, ClassEmbeddings(Tensor(g_rows[perm])), p, 2, 2)
            assert np.abs(out1.enhanced.data - out2.enhanced.data).max() < 1e-9
            assert np.abs(out1.new_mask.logits.data[perm]
                          - out2.new_mask.logits.data).max() < 1e-9
            assert np.abs(out1.updated_g.g.data[perm]
                          - out2.updated_g.g.data).max() < 1e-9

    def test_gradient_through_full_step(self, rng):
        p = _sau(rng)
        p.psi2.weight.assign(rng.standard_normal(p.psi2.weight.shape) * 0.2)
        g = ClassEmbeddings(Tensor(rng.standard_normal((3, 8))))
        proj = Tensor(rng.standard_normal((4, 8)))
        proj_g = Tensor(rng.standard_normal((3, 8)))

        def f(x):
            out = sau_step(x, g, p, 2, 2)
            return ops.add(ops.sum(ops.mul(out.enhanced, proj)),
                           ops.sum(ops.mul(out.updated_g.g, proj_g)))

        assert grad_check(f, Tensor(rng.standard_normal((4, 8)))) < 1e-6
