import numpy as np
import pytest

from styletrans import network
from styletrans.gradcheck import check_gradients, rand_tensor
from styletrans.network import (ConfigError, ModelParams,
                                TransformerConfig, attention_weights,
                                cnn_decode, decoder_layer, encode_content,
                                encode_style, encoder_layer,
                                multi_head_attention, stylize)
from styletrans.patching import ImageBuffer, PatchSequence, unembed_shape
from styletrans.tensor import Tensor, tsum
from styletrans.verify import toy_config


def loop_attention_oracle(q_in, kv_in, wq, wk, wv, wo, heads):
    """Independent per-head, per-row attention with explicit loops."""
    Lq, C = q_in.shape
    dh = C // heads
    concat = np.zeros((Lq, C))
    for h in range(heads):
        Wq = wq[:, h * dh:(h + 1) * dh]
        Wk = wk[:, h * dh:(h + 1) * dh]
        Wv = wv[:, h * dh:(h + 1) * dh]
        for i in range(Lq):
            q = q_in[i] @ Wq
            scores = np.array([q @ (kv_in[j] @ Wk) / np.sqrt(dh)
                               for j in range(kv_in.shape[0])])
            e = np.exp(scores - scores.max())
            w = e / e.sum()
            concat[i, h * dh:(h + 1) * dh] = sum(
                w[j] * (kv_in[j] @ Wv) for j in range(kv_in.shape[0]))
    return concat @ wo


def make_params(seed=0, dtype=np.float64, **kw):
    cfg = toy_config()
    for k, v in kw.items():
        setattr(cfg, k, v)
    return ModelParams.initialize(cfg, seed=seed, dtype=dtype)


class TestConfig:
    def test_heads_must_divide(self):
        with pytest.raises(ConfigError, match="heads"):
            TransformerConfig(channels=64, heads=5)

    def test_channel_schedule(self):
        with pytest.raises(ConfigError, match="divisible by 8"):
            TransformerConfig(channels=60, heads=4)

    def test_patch_fixed(self):
        with pytest.raises(ConfigError, match="patch"):
            TransformerConfig(channels=64, heads=4, patch=4)

    def test_ffn_default(self):
        cfg = TransformerConfig(channels=64, heads=4)
        assert cfg.ffn_hidden == 256
        assert cfg.d_head == 16

    def test_meta_roundtrip(self):
        cfg = toy_config(pe_mode="sinusoidal")
        assert TransformerConfig.from_meta(cfg.to_meta()) == cfg


class TestAttention:
    def test_single_key_uniform(self, rng):
        params = make_params()
        q = rand_tensor(rng, (5, 64))
        kv = rand_tensor(rng, (1, 64))
        mats = attention_weights(q, kv, params, "enc_c.0.attn", 4)
        for m in mats:
            assert np.allclose(m, 1.0)
        out = multi_head_attention(q, kv, params, "enc_c.0.attn", 4)
        # every row equals the single value vector mixed through wo
        assert np.abs(out.numpy() - out.numpy()[0]).max() < 1e-12

    def test_identical_keys_uniform(self, rng):
        params = make_params()
        q = rand_tensor(rng, (3, 64))
        kv = Tensor(np.broadcast_to(rng.standard_normal(64),
                                    (6, 64)).copy())
        mats = attention_weights(q, kv, params, "enc_c.0.attn", 4)
        for m in mats:
            assert np.abs(m - 1 / 6).max() < 1e-12

    def test_rows_sum_to_one_f32(self, rng):
        params = make_params(dtype=np.float32)
        q = Tensor(rng.standard_normal((7, 64)).astype(np.float32))
        kv = Tensor(rng.standard_normal((5, 64)).astype(np.float32))
        for m in attention_weights(q, kv, params, "dec.0.attn1", 4):
            assert np.abs(m.sum(axis=-1) - 1.0).max() < 1e-6

    def test_matches_loop_oracle(self, rng):
        params = make_params()
        q = Tensor(rng.standard_normal((6, 64)))
        kv = Tensor(rng.standard_normal((4, 64)))
        got = multi_head_attention(q, kv, params, "enc_s.0.attn",
                                   4).numpy()
        p = {k: params[f"enc_s.0.attn.{k}"].numpy()
             for k in ("wq", "wk", "wv", "wo")}
        want = loop_attention_oracle(q.numpy(), kv.numpy(), p["wq"],
                                     p["wk"], p["wv"], p["wo"], 4)
        assert np.abs(got - want).max() < 1e-9


class TestEncoder:
    def test_zero_ffn_reduces_to_ln(self, rng):
        params = make_params()
        for nm in ("ffn.1.w", "ffn.1.b", "ffn.2.w", "ffn.2.b"):
            params[f"enc_c.0.{nm}"].data[:] = 0.0
        x = Tensor(rng.standard_normal((5, 64)))
        out = encoder_layer(x, params, "enc_c.0", 4).numpy()
        a = multi_head_attention(x, x, params, "enc_c.0.attn", 4)
        z1 = network._ln(a + x, params, "enc_c.0.ln1")
        want = network._ln(z1, params, "enc_c.0.ln2").numpy()
        assert np.abs(out - want).max() < 1e-12

    def test_single_token(self, rng):
        params = make_params()
        x = Tensor(rng.standard_normal((1, 64)))
        assert encoder_layer(x, params, "enc_c.0", 4).shape == (1, 64)

    def test_gradient(self, rng):
        params = make_params(seed=3)
        x = rand_tensor(rng, (4, 64), scale=0.5)
        R = Tensor(rng.standard_normal((4, 64)))
        probes = [x, params["enc_c.0.attn.wv"], params["enc_c.0.ffn.2.w"]]
        err = check_gradients(
            lambda *_: tsum(encoder_layer(x, params, "enc_c.0", 4) * R),
            probes, entries=4)
        assert err < 1e-4

    def test_zero_pe_matches_plain_stack(self, rng):
        params = make_params()
        tokens = Tensor(rng.standard_normal((6, 64)))
        zero = Tensor(np.zeros((6, 64)))
        a = encode_content(tokens, zero, params).numpy()
        b = encoder_layer(tokens, params, "enc_c.0", 4).numpy()
        assert np.array_equal(a, b)

    def test_domain_specific_weights_differ(self, rng):
        params = make_params()
        tokens = Tensor(rng.standard_normal((6, 64)))
        c = encode_content(tokens, Tensor(np.zeros((6, 64))),
                           params).numpy()
        s = encode_style(tokens, params).numpy()
        assert np.abs(c - s).max() > 1e-3

    def test_style_permutation_equivariance(self, rng):
        params = make_params(dtype=np.float32)
        tokens = Tensor(rng.standard_normal((16, 64)).astype(np.float32))
        perm = rng.permutation(16)
        out = encode_style(tokens, params).numpy()
        out_p = encode_style(Tensor(tokens.data[perm]), params).numpy()
        assert np.abs(out_p - out[perm]).max() < 1e-4


class TestDecoder:
    def test_single_style_token(self, rng):
        params = make_params()
        x = Tensor(rng.standard_normal((5, 64)))
        y_s = Tensor(rng.standard_normal((1, 64)))
        pos = Tensor(np.zeros((5, 64)))
        out = decoder_layer(x, y_s, pos, params, "dec.0", 4)
        assert out.shape == (5, 64)

    def test_zero_pos_well_defined(self, rng):
        params = make_params()
        x = Tensor(rng.standard_normal((4, 64)))
        y_s = Tensor(rng.standard_normal((6, 64)))
        pos = Tensor(np.zeros((4, 64)))
        out = decoder_layer(x, y_s, pos, params, "dec.0", 4).numpy()
        assert np.all(np.isfinite(out))

    def test_gradient(self, rng):
        params = make_params(seed=5)
        x = rand_tensor(rng, (4, 64), scale=0.5)
        y_s = rand_tensor(rng, (3, 64), scale=0.5)
        pos = rand_tensor(rng, (4, 64), scale=0.5)
        R = Tensor(rng.standard_normal((4, 64)))
        probes = [x, y_s, pos, params["dec.0.attn2.wk"]]
        err = check_gradients(
            lambda *_: tsum(decoder_layer(x, y_s, pos, params, "dec.0", 4)
                            * R), probes, entries=4)
        assert err < 1e-4


class TestCnnDecode:
    def test_output_shape(self, rng):
        params = make_params()
        seq = PatchSequence(tokens=Tensor(rng.standard_normal((16, 64))),
                            grid=(4, 4), patch=8)
        assert cnn_decode(seq, params).shape == (32, 32, 3)

    def test_zero_input_zero_biases(self, rng):
        params = make_params()
        for name, t in params.items():
            if name.startswith("cnn") and name.endswith(".b"):
                t.data[:] = 0.0
        seq = PatchSequence(tokens=Tensor(np.zeros((16, 64))),
                            grid=(4, 4), patch=8)
        assert not cnn_decode(seq, params).numpy().any()

    @pytest.mark.parametrize("grid", [(1, 1), (2, 3), (4, 2)])
    def test_matches_unembed_shape(self, rng, grid):
        params = make_params()
        L = grid[0] * grid[1]
        seq = PatchSequence(tokens=Tensor(rng.standard_normal((L, 64))),
                            grid=grid, patch=8)
        H, W = unembed_shape(seq)
        assert cnn_decode(seq, params).shape == (H, W, 3)


class TestStylize:
    def test_shape_and_range(self, toy_pair):
        params = make_params(dtype=np.float32)
        content, style = toy_pair
        out = stylize(content, style, params)
        assert out.values.shape == (32, 32, 3)
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0

    def test_deterministic(self, toy_pair):
        params = make_params(dtype=np.float32)
        content, style = toy_pair
        a = stylize(content, style, params)
        b = stylize(content, style, params)
        assert np.array_equal(a.values, b.values)

    def test_unequal_resolutions(self, rng):
        params = make_params(dtype=np.float32)
        content = ImageBuffer(rng.random((64, 64, 3)))
        style = ImageBuffer(rng.random((32, 32, 3)))
        out = stylize(content, style, params)
        assert out.values.shape == (64, 64, 3)

    def test_non_square_content(self, rng):
        params = make_params(dtype=np.float32)
        content = ImageBuffer(rng.random((64, 32, 3)))
        style = ImageBuffer(rng.random((32, 32, 3)))
        out = stylize(content, style, params)
        assert out.values.shape == (64, 32, 3)

    def test_pe_override_modes(self, toy_pair):
        params = make_params(dtype=np.float32)
        content, style = toy_pair
        for mode in ("none", "sinusoidal", "cape"):
            out = stylize(content, style, params, pe_override=mode)
            assert out.values.shape == (32, 32, 3)

    def test_separate_embeddings(self, toy_pair):
        params = make_params(dtype=np.float32, separate_embeddings=True)
        content, style = toy_pair
        assert "embed_c.w" in params.tensors
        out = stylize(content, style, params)
        assert out.values.shape == (32, 32, 3)

    def test_full_pipeline_gradient_suite(self):
        from styletrans.verify import pipeline_gradient_suite
        res = pipeline_gradient_suite()
        assert res.passed, res.line()
