"""Central finite-difference gradient checking.

The oracle side of every gradient test: perturb entries of each input
tensor by +/-h, evaluate the scalar function twice, and compare the
quotient against the autodiff gradient.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_entries(fn, t, idxs, h=1e-5):
    """Central-difference gradient of scalar fn() at chosen flat entries."""
    flat = t.data.reshape(-1)
    out = np.empty(len(idxs), dtype=np.float64)
    for j, i in enumerate(idxs):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn().item()
        flat[i] = orig - h
        lo = fn().item()
        flat[i] = orig
        out[j] = (hi - lo) / (2.0 * h)
    return out


def check_gradients(fn, tensors, h=1e-5, entries=None, seed=0):
    """Max relative error between autodiff and finite differences.

    `fn` is called as fn(*tensors); entries are perturbed in place, so it
    may also simply close over the same Tensor objects.
    With `entries` set, only that many entries per tensor are probed:
    the ones with the largest autodiff gradient magnitude, which are the
    numerically well-conditioned quotients (plus one random entry for
    coverage). Relative error is per-tensor:
    ||ad - fd|| / max(||fd||, 1e-6) over the probed entries.
    """
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()

    def evaluate():
        return fn(*tensors)

    out = evaluate()
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        ad = (t.grad if t.grad is not None
              else np.zeros_like(t.data)).reshape(-1)
        if entries is None or entries >= ad.size:
            idxs = np.arange(ad.size)
        else:
            idxs = list(np.argsort(-np.abs(ad))[:entries])
            idxs.append(int(rng.integers(0, ad.size)))
        fd = finite_difference_entries(evaluate, t, idxs, h=h)
        diff = np.linalg.norm(ad[idxs] - fd)
        ref = max(np.linalg.norm(fd), 1e-6)
        worst = max(worst, diff / ref)
    return worst


def rand_tensor(rng, shape, scale=1.0, dtype=np.float64):
    return Tensor(rng.standard_normal(shape).astype(dtype) * scale,
                  requires_grad=True)
