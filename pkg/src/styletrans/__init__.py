"""Patch-transformer style transfer with verifiable numerics.

A desk-scale, dependency-light implementation: a minimal reverse-mode
autodiff tensor core, patch embedding with a content-aware positional
encoding, dual domain-specific transformer encoders, a cross-attention
decoder with a CNN refinement stage, perceptual and identity losses, and
Adam training — all checked against independent oracles (closed-form
encoding identities, finite differences, brute-force attention).
"""

__version__ = "0.1.0"

from .tensor import Tensor  # noqa: F401
