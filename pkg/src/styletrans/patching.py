"""Image I/O and conversion between images and patch token sequences.

Images are H x W x 3 float arrays in [0,1]. The bit-exact interchange
format is binary PPM (P6, maxval 255); PGM (P5) is supported for
single-channel heatmaps. An image is split into non-overlapping m x m
patches, each flattened (row-major within the patch, channel fastest)
and linearly projected to a C-dimensional token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, matmul, reshape, transpose


class ImageFormatError(ValueError):
    pass


@dataclass
class ImageBuffer:
    """RGB image, float values in [0,1], channel-last."""
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ImageFormatError(f"expected HxWx3 image, got {v.shape}")
        self.values = v

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class PatchSequence:
    """L x C token embedding plus its patch-grid geometry."""
    tokens: Tensor
    grid: tuple  # (h_p, w_p)
    patch: int

    @property
    def length(self):
        return self.tokens.shape[0]

    @property
    def channels(self):
        return self.tokens.shape[1]


# -- PPM / PGM ---------------------------------------------------------

def _read_header_token(buf, pos):
    # skip whitespace and '#' comments
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c in b" \t\r\n":
            pos += 1
        elif c == ord("#"):
            while pos < n and buf[pos] != ord("\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise ImageFormatError(f"truncated header at byte {start}")
    return buf[start:pos], pos


def _read_netpbm(path, magic):
    with open(path, "rb") as f:
        buf = f.read()
    tok, pos = _read_header_token(buf, 0)
    if tok != magic:
        raise ImageFormatError(
            f"{path}: expected {magic.decode()} magic at byte 0, got {tok!r}")
    dims = []
    for _ in range(3):
        tok, pos = _read_header_token(buf, pos)
        try:
            dims.append(int(tok))
        except ValueError:
            raise ImageFormatError(
                f"{path}: non-numeric header field {tok!r} at byte {pos}")
    width, height, maxval = dims
    if maxval != 255:
        raise ImageFormatError(
            f"{path}: unsupported maxval {maxval} at byte {pos}")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(
            f"{path}: truncated payload at byte {pos + len(payload)} "
            f"({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(
        (height, width, channels) if channels == 3 else (height, width))
    return arr


def read_ppm(path) -> ImageBuffer:
    arr = _read_netpbm(path, b"P6")
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def write_ppm(img: ImageBuffer, path):
    u8 = np.clip(np.rint(img.values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        f.write(u8.tobytes())


def read_pgm(path) -> np.ndarray:
    arr = _read_netpbm(path, b"P5")
    return arr.astype(np.float64) / 255.0


def write_pgm(values: np.ndarray, path):
    if values.ndim != 2:
        raise ImageFormatError(f"PGM wants a 2-D array, got {values.shape}")
    u8 = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (values.shape[1], values.shape[0]))
        f.write(u8.tobytes())


def read_image(path) -> ImageBuffer:
    """PPM natively; PNG via Pillow when available (CLI convenience)."""
    if str(path).lower().endswith(".png"):
        from PIL import Image
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
        return ImageBuffer(arr / 255.0)
    return read_ppm(path)


# -- patch embedding ---------------------------------------------------

def crop_to_multiple(img: ImageBuffer, m: int) -> ImageBuffer:
    """Center-crop so both dimensions are divisible by m."""
    H, W = img.height, img.width
    h, w = (H // m) * m, (W // m) * m
    if h == 0 or w == 0:
        raise ImageFormatError(f"image {H}x{W} smaller than patch size {m}")
    r0, c0 = (H - h) // 2, (W - w) // 2
    return ImageBuffer(img.values[r0:r0 + h, c0:c0 + w])


def embed(img: ImageBuffer, weight: Tensor, bias: Tensor,
          m: int = 8) -> PatchSequence:
    """Project non-overlapping m x m x 3 patches to C-dimensional tokens.

    Tokens come out in row-major patch-grid order; patch flattening is
    row-major within the patch, channel fastest (frozen by the weight
    file format).
    """
    H, W = img.height, img.width
    if H % m or W % m:
        raise ImageFormatError(
            f"image {H}x{W} not divisible by patch size {m}")
    h_p, w_p = H // m, W // m
    x = Tensor(img.values.astype(weight.dtype))
    x = reshape(x, (h_p, m, w_p, m, 3))
    x = transpose(x, (0, 2, 1, 3, 4))
    x = reshape(x, (h_p * w_p, m * m * 3))
    tokens = matmul(x, weight) + bias
    return PatchSequence(tokens=tokens, grid=(h_p, w_p), patch=m)


def embed_tokens(tokens: Tensor, grid, m=8) -> PatchSequence:
    return PatchSequence(tokens=tokens, grid=tuple(grid), patch=m)


def unembed_shape(seq: PatchSequence):
    h_p, w_p = seq.grid
    return (seq.patch * h_p, seq.patch * w_p)
