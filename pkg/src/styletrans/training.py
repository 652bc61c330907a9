"""Adam optimization with linear warm-up and the per-step training loop.

Everything is driven by a seeded numpy Generator (PCG64), so a run is a
pure function of (seed, config, data): the loss trace is bitwise
reproducible.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .losses import LossReport, LossWeights, total_loss
from .network import ModelParams, stylize_tensor
from .patching import ImageBuffer, read_image


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 2
    total_iters: int = 200
    crop: int = 32
    seed: int = 0
    base_lr: float = 5e-4
    warmup_steps: int = -1        # -1: 1% of total_iters, at least 100
    clip_norm: float = 0.0        # 0 disables clipping
    ckpt_every: int = 0           # 0: only a final checkpoint

    def __post_init__(self):
        if min(self.batch_size, self.total_iters, self.crop) < 1:
            raise TrainingError("batch_size, total_iters, crop must be >= 1")
        if self.warmup_steps < 0:
            self.warmup_steps = max(100, self.total_iters // 100)


def lr_schedule(t: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp to base_lr over warmup_steps, then a constant plateau."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(t / warmup_steps, 1.0)


class AdamState:
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: ModelParams, base_lr=5e-4, warmup_steps=0):
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps


def adam_step(params: ModelParams, state: AdamState,
              clip_norm: float = 0.0) -> float:
    """One bias-corrected Adam update in place; returns the lr used."""
    state.t += 1
    lr = lr_schedule(state.t, state.base_lr, state.warmup_steps)
    grads = {}
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient for parameter {name!r} at step "
                f"{state.t}")
        grads[name] = g
    if clip_norm > 0.0:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > clip_norm:
            scale = clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + state.eps)) \
            .astype(p.dtype)
    return lr


def train_step(batch, params: ModelParams, state: AdamState, extractor,
               weights: LossWeights, raw_norms=False, sigma="std",
               clip_norm=0.0):
    """Forward/backward over a batch of (content, style) pairs + Adam."""
    if not batch:
        raise TrainingError("empty batch")
    params.zero_grad()
    acc = None
    reports = []
    for content, style in batch:
        out = stylize_tensor(content, style, params)
        out_cc = stylize_tensor(content, content, params)
        out_ss = stylize_tensor(style, style, params)
        loss, report = total_loss(content, style, out, out_cc, out_ss,
                                  extractor, weights, raw_norms, sigma)
        reports.append(report)
        acc = loss if acc is None else acc + loss
    mean_loss = acc * (1.0 / len(batch))
    mean_loss.backward()
    lr = adam_step(params, state, clip_norm)
    k = 1.0 / len(batch)
    return LossReport(
        content=k * sum(r.content for r in reports),
        style=k * sum(r.style for r in reports),
        identity_pixel=k * sum(r.identity_pixel for r in reports),
        identity_feature=k * sum(r.identity_feature for r in reports),
        total=k * sum(r.total for r in reports)), lr


# -- data sampling -----------------------------------------------------

IMAGE_EXTS = (".ppm", ".png")


def list_images(directory):
    try:
        names = sorted(os.listdir(directory))
    except OSError:
        raise TrainingError(f"cannot read directory {directory!r}")
    paths = [os.path.join(directory, n) for n in names
             if n.lower().endswith(IMAGE_EXTS)]
    if not paths:
        raise TrainingError(f"no images (*.ppm, *.png) in {directory!r}")
    return paths


def random_crop(img: ImageBuffer, crop: int, rng) -> ImageBuffer:
    H, W = img.height, img.width
    if H < crop or W < crop:
        raise TrainingError(
            f"image {H}x{W} smaller than crop size {crop}")
    r = int(rng.integers(0, H - crop + 1))
    c = int(rng.integers(0, W - crop + 1))
    return ImageBuffer(img.values[r:r + crop, c:c + crop])


def sample_pair(content_paths, style_paths, crop: int, rng):
    """Uniform file choice plus uniform crop offset from one rng stream."""
    cp = content_paths[int(rng.integers(0, len(content_paths)))]
    sp = style_paths[int(rng.integers(0, len(style_paths)))]
    return (random_crop(read_image(cp), crop, rng),
            random_crop(read_image(sp), crop, rng))


def train_loop(params: ModelParams, content_dir, style_dir,
               train_cfg: TrainConfig, extractor, weights: LossWeights,
               raw_norms=False, sigma="std", csv_path=None, ckpt_path=None,
               log=None):
    """Full training run; yields nothing, returns the list of reports."""
    from .weights import save_model
    content_paths = list_images(content_dir)
    style_paths = list_images(style_dir)
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState(params, base_lr=train_cfg.base_lr,
                      warmup_steps=train_cfg.warmup_steps)
    reports = []
    writer = None
    csv_file = None
    if csv_path:
        csv_file = open(csv_path, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["step", "L_c", "L_s", "L_id1", "L_id2",
                         "total", "lr"])
    try:
        for step in range(1, train_cfg.total_iters + 1):
            batch = [sample_pair(content_paths, style_paths,
                                 train_cfg.crop, rng)
                     for _ in range(train_cfg.batch_size)]
            report, lr = train_step(batch, params, state, extractor,
                                    weights, raw_norms, sigma,
                                    train_cfg.clip_norm)
            reports.append(report)
            if writer:
                writer.writerow([step,
                                 repr(report.content), repr(report.style),
                                 repr(report.identity_pixel),
                                 repr(report.identity_feature),
                                 repr(report.total), repr(lr)])
            if log and (step == 1 or step % 10 == 0):
                log(f"step {step}/{train_cfg.total_iters} "
                    f"total={report.total:.5f} lr={lr:.6f}")
            if ckpt_path and train_cfg.ckpt_every \
                    and step % train_cfg.ckpt_every == 0:
                save_model(ckpt_path, params)
    finally:
        if csv_file:
            csv_file.close()
    if ckpt_path:
        save_model(ckpt_path, params)
    return reports
