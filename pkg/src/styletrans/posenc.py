"""Positional encodings for the patch grid.

Two families: the classic 2D sinusoidal code (with its closed-form
dot-product identity usable as an oracle), and a content-aware code
computed by pooling the patch embedding to a fixed n x n grid, passing
it through a learnable 1x1 convolution, and bilinearly resizing back to
the token grid. The fixed pooled grid is what makes the content-aware
code resolution-independent.
"""

from __future__ import annotations

import numpy as np

from .tensor import (Tensor, ShapeError, avgpool_adaptive, conv2d_1x1,
                     interp_bilinear_aligned, reshape)
from .patching import PatchSequence


class PosEncodingError(ValueError):
    pass


def frequencies(d: int) -> np.ndarray:
    """w_k = 1/10000^(2k/(d/4)) for k = 0..d/4-1 (d=512 gives 2k/128)."""
    if d % 4:
        raise PosEncodingError(f"encoding dim {d} not divisible by 4")
    q = d // 4
    k = np.arange(q, dtype=np.float64)
    return 10000.0 ** (-2.0 * k / q)


def sinusoidal_pe(grid, d: int) -> np.ndarray:
    """L x d encoding for an h_p x w_p patch grid, row-major token order.

    Channel layout (frozen): first d/2 channels encode the column
    coordinate x as [sin(w_k x), cos(w_k x)] interleaved per frequency,
    the second d/2 encode the row coordinate y the same way.
    """
    h_p, w_p = grid
    w = frequencies(d)
    ys, xs = np.meshgrid(np.arange(h_p), np.arange(w_p), indexing="ij")
    xs = xs.reshape(-1, 1).astype(np.float64)
    ys = ys.reshape(-1, 1).astype(np.float64)
    L = h_p * w_p
    pe = np.empty((L, d), dtype=np.float64)
    pe[:, 0:d // 2:2] = np.sin(w * xs)
    pe[:, 1:d // 2:2] = np.cos(w * xs)
    pe[:, d // 2::2] = np.sin(w * ys)
    pe[:, d // 2 + 1::2] = np.cos(w * ys)
    return pe


def relative_dot(dx, dy, d: int) -> float:
    """Closed-form dot product of two encodings at offset (dx, dy)."""
    w = frequencies(d)
    return float(np.sum(np.cos(w * dx) + np.cos(w * dy)))


def pairwise_dot_matrix(pe: np.ndarray) -> np.ndarray:
    return pe @ pe.T


def closed_form_dot_matrix(grid, d: int) -> np.ndarray:
    h_p, w_p = grid
    ys, xs = np.meshgrid(np.arange(h_p), np.arange(w_p), indexing="ij")
    xs = xs.reshape(-1)
    ys = ys.reshape(-1)
    w = frequencies(d)
    dx = xs[None, :] - xs[:, None]
    dy = ys[None, :] - ys[:, None]
    return (np.cos(w[:, None, None] * dx).sum(axis=0)
            + np.cos(w[:, None, None] * dy).sum(axis=0))


def attention_decomposition(E_i, E_j, P_i, P_j, W_q, W_k):
    """Raw (unscaled) query-key score and its four expansion terms.

    Inputs are C-vectors and C x d projection matrices; returns the d x d
    score matrix computed directly from the summed embeddings plus the
    four cross terms, each computed from the parts in isolation.
    """
    E_i, E_j, P_i, P_j = (np.asarray(v, dtype=np.float64)
                          for v in (E_i, E_j, P_i, P_j))
    W_q = np.asarray(W_q, dtype=np.float64)
    W_k = np.asarray(W_k, dtype=np.float64)
    if E_i.shape != E_j.shape or P_i.shape != E_i.shape:
        raise ShapeError("attention_decomposition: embedding shape mismatch")
    q = W_q.T @ (E_i + P_i)
    k = W_k.T @ (E_j + P_j)
    lhs = np.outer(q, k)
    terms = (
        np.outer(W_q.T @ E_i, W_k.T @ E_j),
        np.outer(W_q.T @ E_i, W_k.T @ P_j),
        np.outer(W_q.T @ P_i, W_k.T @ E_j),
        np.outer(W_q.T @ P_i, W_k.T @ P_j),
    )
    return lhs, terms


def pooled_grid(seq: PatchSequence, n: int) -> Tensor:
    """Adaptive n x n average pooling of the token field (pre 1x1 conv)."""
    h_p, w_p = seq.grid
    if h_p < n or w_p < n:
        raise PosEncodingError(
            f"patch grid {h_p}x{w_p} smaller than pooling grid {n}x{n}; "
            f"reduce pool_grid in the config for small images")
    C = seq.channels
    field = reshape(seq.tokens, (h_p, w_p, C))
    return avgpool_adaptive(field, n, n)


def content_aware_pe(seq: PatchSequence, w: Tensor, b: Tensor,
                     n: int = 18) -> Tensor:
    """L x C content-aware code for the sequence's own grid."""
    h_p, w_p = seq.grid
    C = seq.channels
    pooled = pooled_grid(seq, n)
    coded = conv2d_1x1(pooled, w, b)
    field = interp_bilinear_aligned(coded, h_p, w_p)
    return reshape(field, (h_p * w_p, C))


PE_MODES = ("none", "sinusoidal", "cape")


def encoding_for(mode: str, seq: PatchSequence, params=None, n: int = 18):
    """Additive L x C encoding for the requested mode.

    `params` supplies the (w, b) pair of the learnable 1x1 convolution and
    is only consulted in cape mode.
    """
    if mode == "none":
        return Tensor(np.zeros((seq.length, seq.channels),
                               dtype=seq.tokens.dtype))
    if mode == "sinusoidal":
        pe = sinusoidal_pe(seq.grid, seq.channels)
        return Tensor(pe.astype(seq.tokens.dtype))
    if mode == "cape":
        w, b = params
        return content_aware_pe(seq, w, b, n=n)
    raise PosEncodingError(
        f"unknown positional encoding mode {mode!r}; expected one of "
        f"{PE_MODES}")
