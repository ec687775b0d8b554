"""Pooling-block tests: each sub-op against small hand oracles, the full
stack against step-by-step recomposition, and the structural invariants
(row-stochastic attention, convexity, equivariance, gradients)."""

import numpy as np
import pytest

from clspool import autodiff as ad
from clspool import encoder as enc
from clspool.autodiff import Tensor
from clspool.encoder import (
    AttentionRecord,
    EncoderConfig,
    EncoderParams,
    MemoryLayer,
    MsaLayer,
)


def small_config(**kw):
    base = dict(d_model=6, n_blocks=2, n_heads=2, d_k=3,
                memory_size=8, memory_topk=2, frontend_layers=1)
    base.update(kw)
    return EncoderConfig(**base)


def zero_params(config, input_dim=None):
    params = EncoderParams.init(config, np.random.default_rng(0), input_dim)
    for _, p in params.parameters():
        p.values[...] = 0.0
    return params


class TestConfig:
    def test_head_width_must_tile_model(self):
        with pytest.raises(ValueError, match="d_model"):
            EncoderConfig(d_model=6, n_heads=4, d_k=2)

    def test_topk_defaults_to_quarter(self):
        cfg = EncoderConfig(d_model=6, n_heads=2, d_k=3, memory_size=32)
        assert cfg.memory_topk == 8

    def test_topk_bounded_by_memory(self):
        with pytest.raises(ValueError, match="memory_topk"):
            EncoderConfig(d_model=6, n_heads=2, d_k=3, memory_size=4, memory_topk=5)


class TestProjectQkv:
    def test_identity_projection_passes_input_through(self):
        cfg = small_config(n_heads=1, d_k=6)
        layer = MsaLayer.init(cfg, np.random.default_rng(0))
        layer.w_q[0].values[...] = np.eye(6)
        x = Tensor(np.random.default_rng(1).standard_normal((3, 6)))
        q, _, _ = enc.project_qkv(x, layer, 0)
        np.testing.assert_array_equal(q.values, x.values)

    def test_zero_input_gives_zero_projections(self):
        layer = MsaLayer.init(small_config(), np.random.default_rng(0))
        x = Tensor(np.zeros((4, 6)))
        for t in enc.project_qkv(x, layer, 1):
            np.testing.assert_array_equal(t.values, np.zeros((4, 3)))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        layer = MsaLayer.init(small_config(), rng)
        x = rng.standard_normal((3, 6))
        q, k, v = enc.project_qkv(Tensor(x), layer, 0)
        for t, w in ((q, layer.w_q[0]), (k, layer.w_k[0]), (v, layer.w_v[0])):
            expect = np.zeros((3, 3))
            for i in range(3):
                for j in range(3):
                    for p in range(6):
                        expect[i, j] += x[i, p] * w.values[p, j]
            np.testing.assert_allclose(t.values, expect, atol=1e-12)


class TestAttentionWeights:
    def test_single_row(self):
        a = enc.attention_weights(Tensor([[1.0, 2.0]]), Tensor([[0.3, 0.4]]))
        np.testing.assert_array_equal(a.values, [[1.0]])

    def test_identical_rows_attend_uniformly(self):
        q = Tensor([[1.0, 2.0], [1.0, 2.0]])
        k = Tensor([[0.5, -1.0], [0.5, -1.0]])
        a = enc.attention_weights(q, k)
        np.testing.assert_allclose(a.values, np.full((2, 2), 0.5), atol=1e-15)

    def test_scaled_scores(self):
        a = enc.attention_weights(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(a.values, [[0.6698, 0.3302]], atol=1e-3)


class TestHeadOutput:
    def test_uniform_attention_is_average_pooling(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((5, 3))
        a = np.full((5, 5), 0.2)
        h = enc.head_output(Tensor(a), Tensor(v))
        np.testing.assert_allclose(h.values, np.tile(v.mean(axis=0), (5, 1)), atol=1e-12)

    def test_identity_attention_copies_values(self):
        v = Tensor(np.arange(6.0).reshape(3, 2))
        h = enc.head_output(Tensor(np.eye(3)), v)
        np.testing.assert_array_equal(h.values, v.values)

    def test_hand_mix(self):
        h = enc.head_output(Tensor([[0.25, 0.75]]), Tensor([[4.0, 0.0], [0.0, 4.0]]))
        np.testing.assert_allclose(h.values, [[1.0, 3.0]], atol=1e-12)


class TestMsaForward:
    def test_one_head_identity_projection_equals_head_output(self):
        cfg = small_config(n_heads=1, d_k=6)
        rng = np.random.default_rng(3)
        layer = MsaLayer.init(cfg, rng)
        layer.w_head.values[...] = np.eye(6)
        x = Tensor(rng.standard_normal((4, 6)))
        out = enc.msa_forward(x, layer)
        q, k, v = enc.project_qkv(x, layer, 0)
        expect = enc.head_output(enc.attention_weights(q, k), v)
        np.testing.assert_allclose(out.values, expect.values, atol=1e-12)

    def test_zero_input_gives_zero_output(self):
        layer = MsaLayer.init(small_config(), np.random.default_rng(4))
        out = enc.msa_forward(Tensor(np.zeros((3, 6))), layer)
        np.testing.assert_array_equal(out.values, np.zeros((3, 6)))

    def test_sixteen_heads_match_sub_op_composition(self):
        cfg = EncoderConfig(d_model=32, n_blocks=1, n_heads=16, d_k=2,
                            memory_size=4, memory_topk=4, frontend_layers=0)
        rng = np.random.default_rng(0)
        layer = MsaLayer.init(cfg, rng)
        x = Tensor(rng.standard_normal((5, 32)))
        record = AttentionRecord()
        out = enc.msa_forward(x, layer, record)

        heads = []
        for h in range(16):
            q = x.values @ layer.w_q[h].values
            k = x.values @ layer.w_k[h].values
            v = x.values @ layer.w_v[h].values
            s = q @ k.T / np.sqrt(2.0)
            e = np.exp(s - s.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
            heads.append(a @ v)
        expect = np.concatenate(heads, axis=1) @ layer.w_head.values
        np.testing.assert_allclose(out.values, expect, atol=1e-12)
        assert len(record.layers[0].attention) == 16

    def test_record_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        layer = MsaLayer.init(small_config(), rng)
        record = AttentionRecord()
        enc.msa_forward(Tensor(rng.standard_normal((6, 6))), layer, record)
        for a in record.last().attention:
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)


class TestMemoryForward:
    def test_zero_values_leave_residual(self):
        rng = np.random.default_rng(6)
        layer = MemoryLayer.init(small_config(), rng)
        layer.u_v.values[...] = 0.0
        x = rng.standard_normal((4, 6))
        out = enc.memory_forward(Tensor(x), layer, topk=2)
        np.testing.assert_array_equal(out.values, x)

    def test_identity_keys_weights(self):
        layer = MemoryLayer(Tensor(np.eye(2), trainable=True),
                            Tensor(np.zeros((2, 2)), trainable=True))
        x = Tensor([[1.0, 0.0]])
        scores = ad.matmul(x, layer.u_k)
        w = ad.topk_softmax(scores, 2, axis=1)
        np.testing.assert_allclose(w.values, [[0.7311, 0.2689]], atol=1e-4)

    def test_identity_keys_and_values_output(self):
        layer = MemoryLayer(Tensor(np.eye(2), trainable=True),
                            Tensor(np.eye(2), trainable=True))
        out = enc.memory_forward(Tensor([[1.0, 0.0]]), layer, topk=2)
        np.testing.assert_allclose(out.values, [[1.7311, 0.2689]], atol=1e-3)

    def test_full_topk_equals_plain_softmax_formula(self):
        rng = np.random.default_rng(7)
        cfg = small_config()
        layer = MemoryLayer.init(cfg, rng)
        x = rng.standard_normal((5, 6))
        out = enc.memory_forward(Tensor(x), layer, topk=cfg.memory_size)
        scores = x @ layer.u_k.values
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_array_equal(out.values, x + w @ layer.u_v.values)

    def test_truncation_zeroes_dropped_keys(self):
        rng = np.random.default_rng(8)
        layer = MemoryLayer.init(small_config(), rng)
        x = Tensor(rng.standard_normal((3, 6)))
        scores = ad.matmul(x, layer.u_k)
        w = ad.topk_softmax(scores, 2, axis=1)
        assert ((w.values > 0).sum(axis=1) == 2).all()


class TestEncoderForward:
    def test_no_blocks_is_frontend_only(self):
        cfg = small_config(n_blocks=0)
        rng = np.random.default_rng(9)
        params = EncoderParams.init(cfg, rng)
        x = rng.standard_normal((4, 6))
        out, record = enc.encoder_forward(Tensor(x), cfg, params)
        np.testing.assert_array_equal(out.values, np.tanh(x @ params.frontend[0].values))
        assert record.layers == []

    def test_zero_params_identity_frontend_is_identity(self):
        cfg = small_config(frontend_layers=0)
        params = zero_params(cfg)
        x = np.random.default_rng(10).standard_normal((5, 6))
        out, _ = enc.encoder_forward(Tensor(x), cfg, params)
        np.testing.assert_array_equal(out.values, x)

    def test_two_blocks_match_stepwise_composition(self):
        cfg = small_config()
        rng = np.random.default_rng(0)
        params = EncoderParams.init(cfg, rng)
        x = Tensor(rng.standard_normal((6, 6)))
        out, record = enc.encoder_forward(x, cfg, params)

        step = enc.frontend_forward(x, params)
        for msa, mem in params.blocks:
            step = ad.add(step, enc.msa_forward(step, msa))
            step = enc.memory_forward(step, mem, cfg.memory_topk)
        np.testing.assert_allclose(out.values, step.values, atol=1e-12)
        assert len(record.layers) == 2

    def test_permutation_equivariance_without_positions(self):
        cfg = small_config()
        rng = np.random.default_rng(11)
        params = EncoderParams.init(cfg, rng)
        x = rng.standard_normal((7, 6))
        perm = rng.permutation(7)
        out, _ = enc.encoder_forward(Tensor(x), cfg, params)
        out_perm, _ = enc.encoder_forward(Tensor(x[perm]), cfg, params)
        np.testing.assert_allclose(out_perm.values, out.values[perm], atol=1e-9)

    def test_convexity_of_head_outputs(self):
        rng = np.random.default_rng(12)
        layer = MsaLayer.init(small_config(), rng)
        x = Tensor(rng.standard_normal((6, 6)))
        for h in range(layer.n_heads):
            q, k, v = enc.project_qkv(x, layer, h)
            out = enc.head_output(enc.attention_weights(q, k), v)
            lo = v.values.min(axis=0) - 1e-12
            hi = v.values.max(axis=0) + 1e-12
            assert (out.values >= lo).all() and (out.values <= hi).all()

    def test_gradient_check_full_encoder(self):
        cfg = small_config()
        rng = np.random.default_rng(13)
        params = EncoderParams.init(cfg, rng)
        w = rng.uniform(-1.0, 1.0, size=(4, 6))

        def f(x):
            out, _ = enc.encoder_forward(x, cfg, params)
            return ad.tensor_sum(ad.mul(out, Tensor(w)))

        err = ad.finite_diff_check(f, Tensor(rng.standard_normal((4, 6))))
        assert err < 1e-4

    def test_uniform_token_rows_are_exactly_uniform(self):
        cfg = small_config()
        rng = np.random.default_rng(14)
        params = EncoderParams.init(cfg, rng)
        record = AttentionRecord()
        enc.encoder_forward(Tensor(rng.standard_normal((5, 6))), cfg, params,
                            record, uniform_token_rows=1)
        for layer in record.layers:
            for a in layer.attention:
                np.testing.assert_array_equal(a[-1], np.full(5, 0.2))
