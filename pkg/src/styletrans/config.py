"""Plain-text key=value run configuration.

One flat namespace covering the model, the optimizer, the loss weights
and the extractor source. Unknown keys are rejected; CLI --set overrides
are applied after the file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .losses import LossWeights
from .network import ConfigError, TransformerConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # model
    channels: int = 512
    heads: int = 8
    encoder_layers: int = 3
    decoder_layers: int = 3
    ffn_hidden: int = 0
    patch: int = 8
    pool_grid: int = 18
    pe_mode: str = "cape"
    separate_embeddings: bool = False
    init_seed: int = 0
    # training
    batch_size: int = 2
    total_iters: int = 200
    crop: int = 32
    seed: int = 0
    base_lr: float = 5e-4
    warmup_steps: int = -1
    clip_norm: float = 0.0
    ckpt_every: int = 0
    # losses
    lambda_content: float = 10.0
    lambda_style: float = 7.0
    lambda_id_pixel: float = 50.0
    lambda_id_feature: float = 1.0
    raw_norms: bool = False
    sigma: str = "std"            # std | variance
    # extractor
    extractor: str = "builtin"    # builtin | path to a weight file
    extractor_seed: int = 7
    extractor_stages: int = 4

    def transformer_config(self) -> TransformerConfig:
        return TransformerConfig(
            channels=self.channels, heads=self.heads,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            ffn_hidden=self.ffn_hidden, patch=self.patch,
            pool_grid=self.pool_grid, pe_mode=self.pe_mode,
            separate_embeddings=self.separate_embeddings)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, total_iters=self.total_iters,
            crop=self.crop, seed=self.seed, base_lr=self.base_lr,
            warmup_steps=self.warmup_steps, clip_norm=self.clip_norm,
            ckpt_every=self.ckpt_every)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            content=self.lambda_content, style=self.lambda_style,
            identity_pixel=self.lambda_id_pixel,
            identity_feature=self.lambda_id_feature)

    def validate(self):
        if self.sigma not in ("std", "variance"):
            raise ConfigError(f"sigma must be std or variance, "
                              f"got {self.sigma!r}")
        self.transformer_config()


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_BOOLS = {"true": True, "1": True, "yes": True,
          "false": False, "0": False, "no": False}


def _convert(key: str, raw: str):
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        v = _BOOLS.get(raw.strip().lower())
        if v is None:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return v
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
    return raw.strip()


def apply_assignments(cfg: RunConfig, pairs):
    for key, raw in pairs:
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _convert(key, raw))
    return cfg


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, "
                              f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        pairs.append((key, value))
    return apply_assignments(cfg, pairs)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        cfg = parse_config_text(f.read())
    cfg.validate()
    return cfg
