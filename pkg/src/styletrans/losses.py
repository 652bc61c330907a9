"""Perceptual content/style losses, identity losses and the weighted total.

Distances are RMS-normalized Euclidean by default (Euclidean distance
divided by sqrt of the element count) so the loss weights stay meaningful
across resolutions; `raw_norms` restores bare Euclidean distances.
Feature statistics sigma defaults to the standard deviation;
`sigma="variance"` switches to raw variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, ShapeError, avgpool_2x2, conv2d_3x3_pad1,
                     maxpool_2x2, power, relu, tmean, tsum)
from .patching import ImageBuffer
from .network import xavier


class ExtractorError(ValueError):
    pass


@dataclass
class LossWeights:
    content: float = 10.0
    style: float = 7.0
    identity_pixel: float = 50.0
    identity_feature: float = 1.0


@dataclass
class LossReport:
    content: float
    style: float
    identity_pixel: float
    identity_feature: float
    total: float


# -- feature extractor -------------------------------------------------

class FeatureExtractor:
    """Frozen stack of conv stages; each stage output is one feature map.

    A stage is a list of layer descriptors:
      ("conv", w, b) 3x3 zero-padded convolution, channel-last
      ("relu",)      pointwise rectifier
      ("avgpool",)   2x average downsample
      ("maxpool",)   2x max downsample
    """

    def __init__(self, stages):
        if len(stages) < 2:
            raise ExtractorError("extractor needs at least 2 stages")
        self.stages = stages

    @property
    def num_stages(self):
        return len(self.stages)

    def __call__(self, img):
        """List of stage outputs for an image tensor or buffer."""
        x = img if isinstance(img, Tensor) else Tensor(img.values)
        feats = []
        for stage in self.stages:
            for layer in stage:
                kind = layer[0]
                if kind == "conv":
                    x = conv2d_3x3_pad1(x, layer[1], layer[2])
                elif kind == "relu":
                    x = relu(x)
                elif kind == "avgpool":
                    x = avgpool_2x2(x)
                elif kind == "maxpool":
                    x = maxpool_2x2(x)
                else:
                    raise ExtractorError(f"unknown layer kind {kind!r}")
            feats.append(x)
        return feats

    def tensors(self) -> dict:
        out = {}
        for i, stage in enumerate(self.stages):
            for j, layer in enumerate(stage):
                if layer[0] == "conv":
                    out[f"stage{i}.{j}.w"] = layer[1]
                    out[f"stage{i}.{j}.b"] = layer[2]
        return out

    def layout(self) -> str:
        """Compact stage description, e.g. 'conv:3:16,relu,avgpool|...'."""
        parts = []
        for stage in self.stages:
            toks = []
            for layer in stage:
                if layer[0] == "conv":
                    w = layer[1]
                    toks.append(f"conv:{w.shape[2]}:{w.shape[3]}")
                else:
                    toks.append(layer[0])
            parts.append(",".join(toks))
        return "|".join(parts)


def builtin_extractor(seed: int = 0, stages: int = 4,
                      dtype=np.float32) -> FeatureExtractor:
    """Deterministic frozen CNN standing in for a pretrained backbone."""
    channels = [3, 16, 32, 48, 64][:stages + 1]
    rng = np.random.default_rng(seed)
    built = []
    for i in range(stages):
        ci, co = channels[i], channels[i + 1]
        w = Tensor(xavier(rng, (3, 3, ci, co), 9 * ci, 9 * co, dtype))
        b = Tensor(np.zeros(co, dtype=dtype))
        built.append([("conv", w, b), ("relu",), ("avgpool",)])
    return FeatureExtractor(built)


def extractor_from_layout(layout: str, tensors: dict) -> FeatureExtractor:
    """Rebuild an extractor from a layout string and named tensors."""
    built = []
    for i, stage_desc in enumerate(layout.split("|")):
        stage = []
        for j, tok in enumerate(stage_desc.split(",")):
            if tok.startswith("conv"):
                for nm in (f"stage{i}.{j}.w", f"stage{i}.{j}.b"):
                    if nm not in tensors:
                        raise ExtractorError(f"missing tensor {nm!r}")
                w = tensors[f"stage{i}.{j}.w"]
                b = tensors[f"stage{i}.{j}.b"]
                _, ci, co = tok.split(":")
                if tuple(w.shape) != (3, 3, int(ci), int(co)):
                    raise ExtractorError(
                        f"stage{i}.{j}.w shape {w.shape} does not match "
                        f"declared conv:{ci}:{co}")
                stage.append(("conv", w, b))
            elif tok in ("relu", "avgpool", "maxpool"):
                stage.append((tok,))
            else:
                raise ExtractorError(f"unknown layer token {tok!r}")
        built.append(stage)
    return FeatureExtractor(built)


# -- distances ---------------------------------------------------------

def _dist(a, b, raw: bool):
    if a.shape != b.shape:
        raise ShapeError(f"distance: shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    sq = tsum(d * d)
    if not raw:
        sq = sq * (1.0 / a.size)
    return power(sq, 0.5)


def _channel_stats(feat, sigma: str):
    mu = tmean(feat, axis=(0, 1))
    xc = feat - mu.reshape((1, 1, feat.shape[-1]))
    var = tmean(xc * xc, axis=(0, 1))
    if sigma == "variance":
        return mu, var
    return mu, power(var + 1e-5, 0.5)


def _as_tensor(img):
    return img if isinstance(img, Tensor) else Tensor(img.values)


def content_loss(out_img, content_img, extractor, raw_norms=False):
    fo = extractor(out_img)
    fc = extractor(content_img)
    acc = None
    for a, b in zip(fo, fc):
        term = _dist(a, b, raw_norms)
        acc = term if acc is None else acc + term
    return acc * (1.0 / extractor.num_stages)


def style_loss(out_img, style_img, extractor, raw_norms=False, sigma="std"):
    fo = extractor(out_img)
    fs = extractor(style_img)
    acc = None
    for a, b in zip(fo, fs):
        mu_a, sg_a = _channel_stats(a, sigma)
        mu_b, sg_b = _channel_stats(b, sigma)
        term = _dist(mu_a, mu_b, raw_norms) + _dist(sg_a, sg_b, raw_norms)
        acc = term if acc is None else acc + term
    return acc * (1.0 / extractor.num_stages)


def identity_losses(content_img, style_img, out_cc, out_ss, extractor,
                    raw_norms=False):
    """Pixel- and feature-level penalties for self-stylization outputs."""
    ic, isty = _as_tensor(content_img), _as_tensor(style_img)
    icc, iss = _as_tensor(out_cc), _as_tensor(out_ss)
    pix = _dist(icc, ic, raw_norms) + _dist(iss, isty, raw_norms)
    acc = None
    for a, b, c, d in zip(extractor(icc), extractor(ic),
                          extractor(iss), extractor(isty)):
        term = _dist(a, b, raw_norms) + _dist(c, d, raw_norms)
        acc = term if acc is None else acc + term
    return pix, acc * (1.0 / extractor.num_stages)


def total_loss(content_img: ImageBuffer, style_img: ImageBuffer,
               out_tensor, out_cc, out_ss, extractor,
               weights: LossWeights, raw_norms=False, sigma="std"):
    """Weighted objective; returns (scalar Tensor, LossReport)."""
    lc = content_loss(out_tensor, _as_tensor(content_img), extractor,
                      raw_norms)
    ls = style_loss(out_tensor, _as_tensor(style_img), extractor,
                    raw_norms, sigma)
    lid1, lid2 = identity_losses(content_img, style_img, out_cc, out_ss,
                                 extractor, raw_norms)
    total = (weights.content * lc + weights.style * ls
             + weights.identity_pixel * lid1
             + weights.identity_feature * lid2)
    report = LossReport(content=lc.item(), style=ls.item(),
                        identity_pixel=lid1.item(),
                        identity_feature=lid2.item(), total=total.item())
    return total, report
