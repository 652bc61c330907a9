"""The style-transfer transformer.

Two domain-specific encoders (content with additive positional code,
style without), a decoder whose layers cross-attend content queries to
style keys/values twice per layer, and a three-stage CNN refinement
decoder that maps the token field back to pixels. Post-norm throughout:
layer normalization after each residual block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, ShapeError, clamp01, concat_lastdim,
                     conv2d_3x3_pad1, layer_norm, matmul, relu, reshape,
                     softmax_lastdim, transpose, upsample_nearest_2x)
from .patching import ImageBuffer, PatchSequence, embed
from . import posenc


class ConfigError(ValueError):
    pass


@dataclass
class TransformerConfig:
    channels: int = 512
    heads: int = 8
    encoder_layers: int = 3
    decoder_layers: int = 3
    ffn_hidden: int = 0          # 0 means 4*channels
    patch: int = 8
    pool_grid: int = 18
    pe_mode: str = "cape"        # content branch; style branch has none
    separate_embeddings: bool = False

    def __post_init__(self):
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.channels
        self.validate()

    def validate(self):
        c = self
        if c.channels % c.heads:
            raise ConfigError(
                f"channels {c.channels} not divisible by heads {c.heads}")
        if c.channels % 8:
            raise ConfigError(
                f"channels {c.channels} must be divisible by 8 for the "
                f"CNN decoder schedule")
        if c.patch != 8:
            raise ConfigError(
                f"patch size {c.patch} unsupported: the 3-stage CNN "
                f"decoder fixes an 8x upsampling factor")
        if min(c.encoder_layers, c.decoder_layers, c.pool_grid) < 1:
            raise ConfigError("layer counts and pool_grid must be >= 1")
        if c.pe_mode not in posenc.PE_MODES:
            raise ConfigError(f"unknown pe_mode {c.pe_mode!r}")

    @property
    def d_head(self):
        return self.channels // self.heads

    def to_meta(self) -> dict:
        return {
            "channels": str(self.channels),
            "heads": str(self.heads),
            "encoder_layers": str(self.encoder_layers),
            "decoder_layers": str(self.decoder_layers),
            "ffn_hidden": str(self.ffn_hidden),
            "patch": str(self.patch),
            "pool_grid": str(self.pool_grid),
            "pe_mode": self.pe_mode,
            "separate_embeddings": str(int(self.separate_embeddings)),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "TransformerConfig":
        ints = ("channels", "heads", "encoder_layers", "decoder_layers",
                "ffn_hidden", "patch", "pool_grid")
        kw = {k: int(meta[k]) for k in ints}
        kw["pe_mode"] = meta["pe_mode"]
        kw["separate_embeddings"] = bool(int(meta["separate_embeddings"]))
        return cls(**kw)


def xavier(rng, shape, fan_in, fan_out, dtype):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


class ModelParams:
    """Named collection of every learnable tensor in the network."""

    def __init__(self, config: TransformerConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def set_requires_grad(self, flag: bool):
        for t in self.tensors.values():
            t.requires_grad = flag

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {
            k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)
            for k, v in self.tensors.items()})

    @classmethod
    def initialize(cls, config: TransformerConfig, seed: int = 0,
                   dtype=np.float32) -> "ModelParams":
        rng = np.random.default_rng(seed)
        C, F = config.channels, config.ffn_hidden
        m = config.patch
        t = {}

        def lin(name, fi, fo):
            t[name + ".w"] = Tensor(xavier(rng, (fi, fo), fi, fo, dtype),
                                    requires_grad=True)
            t[name + ".b"] = Tensor(np.zeros(fo, dtype=dtype),
                                    requires_grad=True)

        def attn(prefix):
            for nm in ("wq", "wk", "wv", "wo"):
                t[f"{prefix}.{nm}"] = Tensor(
                    xavier(rng, (C, C), C, C, dtype), requires_grad=True)

        def ln(prefix):
            t[prefix + ".g"] = Tensor(np.ones(C, dtype=dtype),
                                      requires_grad=True)
            t[prefix + ".b"] = Tensor(np.zeros(C, dtype=dtype),
                                      requires_grad=True)

        def ffn(prefix):
            lin(prefix + ".1", C, F)
            lin(prefix + ".2", F, C)

        embeds = ("embed_c", "embed_s") if config.separate_embeddings \
            else ("embed",)
        for nm in embeds:
            lin(nm, 3 * m * m, C)
        lin("cape", C, C)
        for enc in ("enc_c", "enc_s"):
            for i in range(config.encoder_layers):
                p = f"{enc}.{i}"
                attn(p + ".attn")
                ln(p + ".ln1")
                ffn(p + ".ffn")
                ln(p + ".ln2")
        for i in range(config.decoder_layers):
            p = f"dec.{i}"
            attn(p + ".attn1")
            ln(p + ".ln1")
            attn(p + ".attn2")
            ln(p + ".ln2")
            ffn(p + ".ffn")
            ln(p + ".ln3")
        chans = [C, C // 2, C // 4, C // 8]
        for i in range(3):
            ci, co = chans[i], chans[i + 1]
            t[f"cnn.{i}.w"] = Tensor(
                xavier(rng, (3, 3, ci, co), 9 * ci, 9 * co, dtype),
                requires_grad=True)
            t[f"cnn.{i}.b"] = Tensor(np.zeros(co, dtype=dtype),
                                     requires_grad=True)
        t["cnn.out.w"] = Tensor(
            xavier(rng, (3, 3, chans[3], 3), 9 * chans[3], 27, dtype),
            requires_grad=True)
        t["cnn.out.b"] = Tensor(np.zeros(3, dtype=dtype), requires_grad=True)
        return cls(config, t)

    def embedding(self, branch: str):
        nm = f"embed_{branch}" if self.config.separate_embeddings else "embed"
        return self.tensors[nm + ".w"], self.tensors[nm + ".b"]

    def cape_conv(self):
        return self.tensors["cape.w"], self.tensors["cape.b"]


# -- forward pieces ----------------------------------------------------

def multi_head_attention(q_in: Tensor, kv_in: Tensor, params, prefix: str,
                         heads: int, scaled: bool = True) -> Tensor:
    """Q from q_in, K/V from kv_in, per-head softmax attention, W_o mix."""
    C = q_in.shape[-1]
    if kv_in.shape[-1] != C:
        raise ShapeError(
            f"attention: channel mismatch {q_in.shape} vs {kv_in.shape}")
    dh = C // heads
    Q = matmul(q_in, params[f"{prefix}.wq"])
    K = matmul(kv_in, params[f"{prefix}.wk"])
    V = matmul(kv_in, params[f"{prefix}.wv"])
    outs = []
    scale = 1.0 / np.sqrt(dh) if scaled else 1.0
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = matmul(Q[:, sl], transpose(K[:, sl])) * scale
        w = softmax_lastdim(scores)
        outs.append(matmul(w, V[:, sl]))
    return matmul(concat_lastdim(outs), params[f"{prefix}.wo"])


def attention_weights(q_in, kv_in, params, prefix, heads):
    """Per-head softmax weight matrices (for invariant checks)."""
    C = q_in.shape[-1]
    dh = C // heads
    Q = matmul(q_in, params[f"{prefix}.wq"])
    K = matmul(kv_in, params[f"{prefix}.wk"])
    mats = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = matmul(Q[:, sl], transpose(K[:, sl])) * (1.0 / np.sqrt(dh))
        mats.append(softmax_lastdim(scores).numpy())
    return mats


def feed_forward(x, params, prefix):
    h = relu(matmul(x, params[f"{prefix}.1.w"]) + params[f"{prefix}.1.b"])
    return matmul(h, params[f"{prefix}.2.w"]) + params[f"{prefix}.2.b"]


def _ln(x, params, prefix):
    return layer_norm(x, params[prefix + ".g"], params[prefix + ".b"])


def encoder_layer(x, params, prefix, heads):
    a = multi_head_attention(x, x, params, prefix + ".attn", heads)
    x = _ln(a + x, params, prefix + ".ln1")
    x = _ln(feed_forward(x, params, prefix + ".ffn") + x,
            params, prefix + ".ln2")
    return x


def encode_content(tokens: Tensor, pos: Tensor, params: ModelParams):
    x = tokens + pos
    for i in range(params.config.encoder_layers):
        x = encoder_layer(x, params, f"enc_c.{i}", params.config.heads)
    return x


def encode_style(tokens: Tensor, params: ModelParams):
    x = tokens
    for i in range(params.config.encoder_layers):
        x = encoder_layer(x, params, f"enc_s.{i}", params.config.heads)
    return x


def decoder_layer(x, y_s, pos, params, prefix, heads):
    q1 = x + pos
    x2 = _ln(multi_head_attention(q1, y_s, params, prefix + ".attn1", heads)
             + q1, params, prefix + ".ln1")
    x1 = _ln(multi_head_attention(x2 + pos, y_s, params, prefix + ".attn2",
                                  heads) + x2, params, prefix + ".ln2")
    return _ln(feed_forward(x1, params, prefix + ".ffn") + x1,
               params, prefix + ".ln3")


def decode(y_c, y_s, pos, params: ModelParams):
    x = y_c
    for i in range(params.config.decoder_layers):
        x = decoder_layer(x, y_s, pos, params, f"dec.{i}",
                          params.config.heads)
    return x


def cnn_decode(seq: PatchSequence, params: ModelParams) -> Tensor:
    """Token field -> H x W x 3 image tensor, values clamped to [0,1]."""
    h_p, w_p = seq.grid
    x = reshape(seq.tokens, (h_p, w_p, seq.channels))
    for i in range(3):
        x = conv2d_3x3_pad1(x, params[f"cnn.{i}.w"], params[f"cnn.{i}.b"])
        x = relu(x)
        x = upsample_nearest_2x(x)
    x = conv2d_3x3_pad1(x, params["cnn.out.w"], params["cnn.out.b"])
    return clamp01(x)


def stylize_tensor(content: ImageBuffer, style: ImageBuffer,
                   params: ModelParams,
                   pe_override: str | None = None) -> Tensor:
    """Differentiable stylization; returns the H x W x 3 output tensor."""
    cfg = params.config
    seq_c = embed(content, *params.embedding("c"), m=cfg.patch)
    seq_s = embed(style, *params.embedding("s"), m=cfg.patch)
    mode = pe_override if pe_override is not None else cfg.pe_mode
    pos = posenc.encoding_for(mode, seq_c, params.cape_conv(),
                              n=cfg.pool_grid)
    y_c = encode_content(seq_c.tokens, pos, params)
    y_s = encode_style(seq_s.tokens, params)
    x = decode(y_c, y_s, pos, params)
    out = PatchSequence(tokens=x, grid=seq_c.grid, patch=cfg.patch)
    return cnn_decode(out, params)


def stylize(content: ImageBuffer, style: ImageBuffer, params: ModelParams,
            pe_override: str | None = None) -> ImageBuffer:
    out = stylize_tensor(content, style, params, pe_override)
    return ImageBuffer(np.asarray(out.numpy(), dtype=np.float64))
