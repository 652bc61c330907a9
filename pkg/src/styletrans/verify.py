"""Self-contained oracle and invariant suites.

Each suite pits the implementation against an independent computation:
closed-form encoding identities, brute-force attention, central finite
differences, direct permutation, serialization round trips. The `check`
CLI command runs them all; the test suite asserts through them too.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import posenc
from .gradcheck import check_gradients, rand_tensor
from .losses import LossWeights, builtin_extractor, total_loss
from .network import (ModelParams, TransformerConfig, decoder_layer,
                      encode_content, encode_style, stylize_tensor)
from .patching import ImageBuffer, PatchSequence
from .tensor import (Tensor, avgpool_adaptive, bilinear_weight_matrix,
                     clamp01, concat_lastdim, conv2d_1x1, conv2d_3x3_pad1,
                     interp_bilinear_aligned, layer_norm, matmul,
                     maxpool_2x2, pad2d, power, relu, reshape,
                     softmax_lastdim, tmean, transpose, tsum,
                     upsample_nearest_2x)
from .weights import WeightFormatError, load_tensors, save_tensors


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_err: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name:28s} max_err={self.max_err:.3e}{extra}"


def toy_config(pe_mode="cape") -> TransformerConfig:
    return TransformerConfig(channels=64, heads=4, encoder_layers=1,
                             decoder_layers=1, pool_grid=4,
                             pe_mode=pe_mode)


def toy_images(size=32):
    from .data import sample_content, sample_style
    c = sample_content().values[:size, :size]
    s = sample_style().values[:size, :size]
    return ImageBuffer(c), ImageBuffer(s)


# -- encoding identities ----------------------------------------------

def sinusoidal_identity_suite(pairs=1000, d=512, grid=(32, 32), seed=0):
    """Dot products of constructed encodings vs the closed cosine form."""
    pe = posenc.sinusoidal_pe(grid, d)
    zero = pe[0] @ pe[0]
    worst = abs(zero - 2 * (d // 4))
    rng = np.random.default_rng(seed)
    h_p, w_p = grid
    for _ in range(pairs):
        yi, xi = rng.integers(0, h_p), rng.integers(0, w_p)
        yj, xj = rng.integers(0, h_p), rng.integers(0, w_p)
        got = pe[yi * w_p + xi] @ pe[yj * w_p + xj]
        want = posenc.relative_dot(xj - xi, yj - yi, d)
        worst = max(worst, abs(got - want))
    return SuiteResult("sinusoidal-identity", worst < 1e-9, worst,
                       f"{pairs} pairs, d={d}")


def attention_identity_suite(instances=100, C=16, d=6, seed=0):
    """Direct query-key score vs the sum of its four expansion terms."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        args = [rng.standard_normal(C) for _ in range(4)]
        W_q, W_k = rng.standard_normal((C, d)), rng.standard_normal((C, d))
        lhs, terms = posenc.attention_decomposition(*args, W_q, W_k)
        resid = np.abs(lhs - sum(terms)).max()
        scale = max(np.abs(lhs).max(), 1.0)
        worst = max(worst, resid / scale)
    return SuiteResult("attention-identity", worst < 1e-9, worst,
                       f"{instances} instances")


# -- gradients ---------------------------------------------------------

def primitive_gradient_suite(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = []

    def case(name, fn, *shapes, scale=1.0):
        cases.append((name, fn,
                      [rand_tensor(rng, s, scale=scale) for s in shapes]))

    case("matmul", lambda a, b: tsum(matmul(a, b) * matmul(a, b)),
         (5, 4), (4, 3))
    case("add/mul", lambda a, b: tsum((a + b) * a * 0.5 + b * b), (3, 4),
         (3, 4))
    case("relu", lambda a: tsum(relu(a) * relu(a)), (4, 5))
    case("softmax", lambda a: tsum(softmax_lastdim(a)
                                   * softmax_lastdim(a)), (3, 7))
    case("power", lambda a: tsum(power(a * a + 0.5, 0.5)), (3, 3))
    case("mean/var", lambda a: tsum(tmean(a, axis=0)
                                    + tmean((a - tmean(a)) ** 2)), (4, 6))
    case("reshape/transpose",
         lambda a: tsum(transpose(reshape(a, (2, 6))) * 1.5), (3, 4))
    case("concat", lambda a, b: tsum(concat_lastdim([a, b]) ** 2),
         (3, 2), (3, 4))
    case("slice", lambda a: tsum(a[1:3, ::2] * a[1:3, ::2]), (4, 6))
    case("pad", lambda a: tsum(pad2d(a, 1) ** 2), (3, 4, 2))
    case("layer_norm",
         lambda x, g, b: tsum(layer_norm(x, g, b) ** 2), (4, 8), (8,),
         (8,))
    case("conv1x1", lambda x, w, b: tsum(conv2d_1x1(x, w, b) ** 2),
         (4, 4, 3), (3, 5), (5,))
    case("conv3x3", lambda x, w, b: tsum(conv2d_3x3_pad1(x, w, b) ** 2),
         (4, 5, 2), (3, 3, 2, 3), (3,))
    case("avgpool_adaptive",
         lambda x: tsum(avgpool_adaptive(x, 2, 3) ** 2), (5, 7, 2))
    case("upsample_2x", lambda x: tsum(upsample_nearest_2x(x) ** 2),
         (3, 4, 2))
    case("maxpool_2x2", lambda x: tsum(maxpool_2x2(x) ** 2), (4, 6, 2))
    case("clamp01", lambda x: tsum(clamp01(x + 0.5) * clamp01(x + 0.5)),
         (4, 4), )
    case("bilinear", lambda x: tsum(interp_bilinear_aligned(x, 5, 7) ** 2),
         (3, 4, 2))
    # reuse: same tensor feeding two branches must accumulate both paths
    case("reuse-accumulation", lambda a: tsum(matmul(a, transpose(a))),
         (3, 3))

    worst_name = ""
    for name, fn, tensors in cases:
        err = check_gradients(fn, tensors)
        if err > worst:
            worst, worst_name = err, name
    return SuiteResult("primitive-gradients", worst < 1e-4, worst,
                       f"worst: {worst_name}")


def _toy_setup(seed=1):
    cfg = toy_config()
    params = ModelParams.initialize(cfg, seed=seed, dtype=np.float64)
    # center the pre-clamp output so finite differences never straddle
    # the clamp kink
    params["cnn.out.b"].data[:] = 0.5
    content, style = toy_images(32)
    extractor = builtin_extractor(seed=7, dtype=np.float64)
    return cfg, params, content, style, extractor


def decoder_gradient_suite(seed=2):
    rng = np.random.default_rng(seed)
    cfg = toy_config()
    params = ModelParams.initialize(cfg, seed=seed, dtype=np.float64)
    L, C = 6, cfg.channels
    x = rand_tensor(rng, (L, C), scale=0.5)
    y_s = rand_tensor(rng, (4, C), scale=0.5)
    pos = rand_tensor(rng, (L, C), scale=0.5)
    probes = [x, y_s, pos, params["dec.0.attn1.wq"],
              params["dec.0.attn2.wv"], params["dec.0.ffn.1.w"],
              params["dec.0.ln3.g"]]
    # random linear functional: better conditioned for tiny gradients
    # than a large quadratic
    R = Tensor(rng.standard_normal((L, C)))

    def fn(*_):
        out = decoder_layer(x, y_s, pos, params, "dec.0", cfg.heads)
        return tsum(out * R)

    err = check_gradients(fn, probes, entries=4, seed=seed)
    return SuiteResult("decoder-gradient", err < 1e-4, err,
                       "one decoder layer, FD probes")


def pipeline_gradient_suite(seed=3):
    """Full weighted loss vs finite differences on sampled parameters."""
    cfg, params, content, style, extractor = _toy_setup(seed)
    weights = LossWeights()

    def fn(*_):
        out = stylize_tensor(content, style, params)
        out_cc = stylize_tensor(content, content, params)
        out_ss = stylize_tensor(style, style, params)
        loss, _ = total_loss(content, style, out, out_cc, out_ss,
                             extractor, weights)
        return loss

    probes = [params[k] for k in
              ("embed.w", "cape.w", "enc_c.0.attn.wq", "enc_s.0.ffn.1.w",
               "dec.0.attn2.wv", "cnn.1.w", "cnn.out.b")]
    err = check_gradients(fn, probes, entries=3, seed=seed)
    return SuiteResult("pipeline-gradient", err < 1e-4, err,
                       f"{len(probes)} tensors, 3 entries each")


# -- structural invariants --------------------------------------------

def permutation_suite(seed=4, L=16):
    cfg = toy_config()
    params = ModelParams.initialize(cfg, seed=seed, dtype=np.float32)
    rng = np.random.default_rng(seed)
    tokens = Tensor(rng.standard_normal((L, cfg.channels))
                    .astype(np.float32))
    perm = rng.permutation(L)
    out = encode_style(tokens, params).numpy()
    out_p = encode_style(Tensor(tokens.data[perm]), params).numpy()
    style_dev = float(np.abs(out_p - out[perm]).max())

    # content encoder with a content-aware code must NOT be equivariant;
    # pool 2x2 over the 4x4 grid so interpolation mixes neighbors
    grid, pool = (4, 4), 2
    w, b = params.cape_conv()
    seq = PatchSequence(tokens=Tensor(tokens.data), grid=grid,
                        patch=cfg.patch)
    pos = posenc.content_aware_pe(seq, w, b, n=pool)
    out_c = encode_content(tokens, pos, params).numpy()
    seq_p = PatchSequence(tokens=Tensor(tokens.data[perm]), grid=grid,
                          patch=cfg.patch)
    pos_p = posenc.content_aware_pe(seq_p, w, b, n=pool)
    out_cp = encode_content(Tensor(tokens.data[perm]), pos_p,
                            params).numpy()
    content_dev = float(np.abs(out_cp - out_c[perm]).max())

    passed = style_dev < 1e-4 and content_dev > 1e-2
    return SuiteResult("permutation-equivariance", passed, style_dev,
                       f"content-branch counterexample dev={content_dev:.3e}")


def cape_grid_suite(seed=5, n=18, C=8):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((C, C)) * 0.3)
    b = Tensor(np.zeros(C))
    worst = 0.0
    passed = True
    for grid in ((18, 18), (36, 24), (54, 54)):
        tokens = Tensor(rng.standard_normal((grid[0] * grid[1], C)))
        seq = PatchSequence(tokens=tokens, grid=grid, patch=8)
        pooled = posenc.pooled_grid(seq, n)
        passed &= pooled.shape == (n, n, C)
        pe = posenc.content_aware_pe(seq, w, b, n=n)
        passed &= pe.shape == (grid[0] * grid[1], C)

    # block-constant input: each pooled cell covers exactly one block, so
    # the pooled grids at 36x36 and 54x54 renderings agree
    blocks = rng.standard_normal((n, n, C))
    pooled_ref = None
    pes = {}
    for scale in (2, 3):
        g = n * scale
        field = np.repeat(np.repeat(blocks, scale, 0), scale, 1)
        seq = PatchSequence(tokens=Tensor(field.reshape(g * g, C)),
                            grid=(g, g), patch=8)
        pooled = posenc.pooled_grid(seq, n).numpy()
        if pooled_ref is None:
            pooled_ref = pooled
        else:
            worst = max(worst, float(np.abs(pooled - pooled_ref).max()))
        pes[scale] = posenc.content_aware_pe(seq, w, b, n=n).numpy() \
            .reshape(g, g, C)
    # corner tokens share normalized coordinates across the two renderings
    for (i2, j2), (i3, j3) in zip(
            [(0, 0), (0, 2 * n - 1), (2 * n - 1, 0),
             (2 * n - 1, 2 * n - 1)],
            [(0, 0), (0, 3 * n - 1), (3 * n - 1, 0),
             (3 * n - 1, 3 * n - 1)]):
        dev = float(np.abs(pes[2][i2, j2] - pes[3][i3, j3]).max())
        worst = max(worst, dev)
    passed &= worst < 1e-5

    # bilinear weight rows are convex combinations
    A = bilinear_weight_matrix(n, n, 27, 31)
    row_dev = float(np.abs(A.sum(axis=1) - 1.0).max())
    passed &= row_dev < 1e-6 and A.min() >= 0.0
    return SuiteResult("cape-fixed-grid", bool(passed), worst,
                       f"bilinear row-sum dev={row_dev:.2e}")


def serialization_suite(seed=6):
    cfg = toy_config()
    params = ModelParams.initialize(cfg, seed=seed, dtype=np.float32)
    passed = True
    detail = ""
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "w.styw")
        save_tensors(path, params.tensors, cfg.to_meta())
        arrays, meta = load_tensors(path)
        for name, t in params.items():
            if not np.array_equal(arrays[name], t.data):
                passed = False
                detail = f"round-trip mismatch in {name}"
        if meta != cfg.to_meta():
            passed = False
            detail = "metadata mismatch"
        # flip one payload byte; the checksum must catch it
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        try:
            load_tensors(path)
            passed = False
            detail = "corruption not detected"
        except WeightFormatError:
            pass
    return SuiteResult("serialization", passed, 0.0, detail)


ALL_SUITES = (
    sinusoidal_identity_suite,
    attention_identity_suite,
    primitive_gradient_suite,
    decoder_gradient_suite,
    pipeline_gradient_suite,
    permutation_suite,
    cape_grid_suite,
    serialization_suite,
)


def run_all():
    return [suite() for suite in ALL_SUITES]
