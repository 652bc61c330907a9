"""Command-line entry point.

Subcommands: train, stylize, rounds, pe-compare, check. Exit codes are a
stable contract: 0 success, 1 verification failure, 2 usage/config/data
error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data, figures, posenc, verify
from .config import RunConfig, apply_assignments, load_config
from .losses import ExtractorError, builtin_extractor
from .network import ConfigError, ModelParams, stylize, xavier
from .patching import (ImageFormatError, crop_to_multiple, read_image,
                       write_pgm, write_ppm)
from .posenc import PosEncodingError
from .tensor import ShapeError, Tensor, bilinear_weight_matrix
from .training import TrainingError, train_loop
from .weights import WeightFormatError, load_extractor, load_model

USAGE_ERRORS = (ConfigError, TrainingError, ImageFormatError,
                WeightFormatError, PosEncodingError, ExtractorError,
                ShapeError, FileNotFoundError, NotADirectoryError, OSError)


def _extractor_for(cfg: RunConfig, dtype=np.float32):
    if cfg.extractor == "builtin":
        return builtin_extractor(seed=cfg.extractor_seed,
                                 stages=cfg.extractor_stages, dtype=dtype)
    return load_extractor(cfg.extractor)


def _parse_sets(values):
    pairs = []
    for v in values or ():
        if "=" not in v:
            raise ConfigError(f"--set expects KEY=VALUE, got {v!r}")
        k, _, val = v.partition("=")
        pairs.append((k, val))
    return pairs


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    apply_assignments(cfg, _parse_sets(getattr(args, "set", None)))
    cfg.validate()
    return cfg


def _read_for_model(path, patch, crop_flag):
    img = read_image(path)
    if crop_flag:
        img = crop_to_multiple(img, patch)
    return img


# -- subcommands -------------------------------------------------------

def cmd_train(args):
    cfg = _load_run_config(args)
    params = ModelParams.initialize(cfg.transformer_config(),
                                    seed=cfg.init_seed)
    extractor = _extractor_for(cfg)
    csv_path = args.out + ".loss.csv"
    train_loop(params, args.content, args.style, cfg.train_config(),
               extractor, cfg.loss_weights(), raw_norms=cfg.raw_norms,
               sigma=cfg.sigma, csv_path=csv_path, ckpt_path=args.out,
               log=lambda s: print(s, flush=True))
    figures.loss_curve(csv_path, args.out + ".loss.png")
    print(f"checkpoint: {args.out}")
    print(f"loss trace: {csv_path}")
    return 0


def cmd_stylize(args):
    params = load_model(args.weights)
    content = _read_for_model(args.content, params.config.patch,
                              args.crop_to_multiple)
    style = _read_for_model(args.style, params.config.patch,
                            args.crop_to_multiple)
    out = stylize(content, style, params, pe_override=args.pe)
    write_ppm(out, args.out)
    print(f"wrote {args.out} ({out.width}x{out.height})")
    return 0


def cmd_rounds(args):
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    params = load_model(args.weights)
    content = _read_for_model(args.content, params.config.patch,
                              args.crop_to_multiple)
    style = _read_for_model(args.style, params.config.patch,
                            args.crop_to_multiple)
    os.makedirs(args.out, exist_ok=True)
    current = content
    for i in range(1, args.n + 1):
        current = stylize(current, style, params, pe_override=args.pe)
        path = os.path.join(args.out, f"round_{i:03d}.ppm")
        write_ppm(current, path)
        # read back so round i+1 consumes exactly the file content
        current = read_image(path)
        lo, hi = current.values.min(), current.values.max()
        if not np.all(np.isfinite(current.values)) or lo < 0 or hi > 1:
            raise TrainingError(f"round {i}: values outside [0,1]")
        print(f"round {i}: {path} range [{lo:.3f}, {hi:.3f}]")
    return 0


def _normalized(mat):
    lo, hi = mat.min(), mat.max()
    if hi <= lo:
        return np.zeros_like(mat)
    return (mat - lo) / (hi - lo)


def sample_embedding(grid, channels, seed=11):
    """Deterministic content-derived embedding for encoding comparisons.

    The bundled content image is bilinearly resized to the patch grid and
    projected 3 -> C with a seeded random projection.
    """
    h_p, w_p = grid
    img = data.sample_content().values
    H, W, _ = img.shape
    A = bilinear_weight_matrix(H, W, h_p, w_p)
    field = (A @ img.reshape(H * W, 3)).reshape(h_p * w_p, 3)
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((3, channels))
    return field @ proj


def pe_compare_matrices(grid, d=512, pool=18, seed=11):
    from .patching import PatchSequence
    sin_pe = posenc.sinusoidal_pe(grid, d)
    mats = {
        "sinusoidal": posenc.pairwise_dot_matrix(sin_pe),
        "closed_form": posenc.closed_form_dot_matrix(grid, d),
    }
    emb = sample_embedding(grid, d, seed)
    seq = PatchSequence(tokens=Tensor(emb), grid=grid, patch=8)
    rng = np.random.default_rng(seed + 1)
    w = Tensor(xavier(rng, (d, d), d, d, np.float64))
    b = Tensor(np.zeros(d))
    cape = posenc.content_aware_pe(seq, w, b, n=pool).numpy()
    mats["content_aware"] = posenc.pairwise_dot_matrix(cape)
    return mats


def cmd_pe_compare(args):
    try:
        h_p, w_p = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid expects HxW, got {args.grid!r}")
    mats = pe_compare_matrices((h_p, w_p), d=args.dim, pool=args.pool_grid)
    os.makedirs(args.out, exist_ok=True)
    for name, mat in mats.items():
        path = os.path.join(args.out, f"{name}.pgm")
        write_pgm(_normalized(mat), path)
        print(f"wrote {path} ({mat.shape[0]}x{mat.shape[1]})")
    fig_path = os.path.join(args.out, "pe_compare.png")
    figures.dot_matrix_figure(mats, fig_path)
    print(f"wrote {fig_path}")
    return 0


def cmd_check(args):
    results = verify.run_all()
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} suite(s) failed")
        return 1
    print("all suites passed")
    return 0


# -- parser ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="styletrans",
        description="Patch-transformer style transfer: training, "
                    "stylization, repeated-round harness, positional "
                    "encoding comparison, self-verification.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on content/style directories")
    t.add_argument("--config", help="key=value run configuration file")
    t.add_argument("--content", required=True, help="content image dir")
    t.add_argument("--style", required=True, help="style image dir")
    t.add_argument("--out", required=True, help="checkpoint path; the "
                   "loss CSV and curve PNG are written alongside")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("stylize", help="stylize one image")
    s.add_argument("--weights", required=True)
    s.add_argument("--content", required=True)
    s.add_argument("--style", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pe", choices=posenc.PE_MODES, default=None,
                   help="override the content-branch encoding mode")
    s.add_argument("--crop-to-multiple", action="store_true",
                   help="center-crop inputs to a patch-size multiple")
    s.set_defaults(fn=cmd_stylize)

    r = sub.add_parser("rounds", help="repeated stylization rounds")
    r.add_argument("--weights", required=True)
    r.add_argument("--content", required=True)
    r.add_argument("--style", required=True)
    r.add_argument("--n", type=int, default=20)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--pe", choices=posenc.PE_MODES, default=None)
    r.add_argument("--crop-to-multiple", action="store_true")
    r.set_defaults(fn=cmd_rounds)

    c = sub.add_parser("pe-compare",
                       help="pairwise dot-product heatmaps of the "
                            "positional encodings")
    c.add_argument("--grid", required=True, metavar="HxW",
                   help="patch-grid rows x cols")
    c.add_argument("--dim", type=int, default=512)
    c.add_argument("--pool-grid", type=int, default=18)
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(fn=cmd_pe_compare)

    k = sub.add_parser("check", help="run every oracle/invariant suite")
    k.set_defaults(fn=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
