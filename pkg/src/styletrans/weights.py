"""Binary weight file format.

Layout (all integers little-endian):

    magic   "STYW"
    u32     format version (currently 1)
    u32     tensor count
    per tensor:
        u16     name length, then UTF-8 name
        u8      dtype tag (0 = f32, 1 = f64)
        u8      ndim
        u32[n]  dims
        bytes   payload, row-major little-endian
    u32     metadata length, then UTF-8 "key=value" lines
    u64     checksum: sum of all tensor payload bytes mod 2^64
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"STYW"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class WeightFormatError(ValueError):
    pass


def _payload_sum(payload: bytes) -> int:
    return int(np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64))


def save_tensors(path, tensors: dict, meta: dict | None = None):
    """Write named arrays (Tensor or ndarray) plus a key=value block."""
    meta = meta or {}
    names = list(tensors.keys())
    if len(set(names)) != len(names):
        raise WeightFormatError("duplicate tensor names")
    checksum = 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            arr = tensors[name]
            if isinstance(arr, Tensor):
                arr = arr.data
            # asarray with C order keeps 0-d arrays 0-d
            arr = np.asarray(arr, order="C")
            tag = _TAGS[arr.dtype.newbyteorder("=")]
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", tag, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            payload = arr.astype(_DTYPES[tag]).tobytes()
            checksum = (checksum + _payload_sum(payload)) % (1 << 64)
            f.write(payload)
        mb = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
        f.write(struct.pack("<I", len(mb)))
        f.write(mb)
        f.write(struct.pack("<Q", checksum))


def load_tensors(path):
    """Read a weight file back as ({name: ndarray}, {key: value})."""
    with open(path, "rb") as f:
        buf = f.read()

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFormatError(f"{path}: truncated while reading {what}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4, "magic") != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightFormatError(
            f"{path}: unsupported format version {version} "
            f"(this build reads {VERSION})")
    tensors = {}
    checksum = 0
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        tag, ndim = struct.unpack("<BB", take(2, "tensor header"))
        if tag not in _DTYPES:
            raise WeightFormatError(f"{path}: unknown dtype tag {tag} "
                                    f"for tensor {name!r}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        n = int(np.prod(dims)) if ndim else 1
        payload = take(n * _DTYPES[tag].itemsize, f"payload of {name!r}")
        checksum = (checksum + _payload_sum(payload)) % (1 << 64)
        if name in tensors:
            raise WeightFormatError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=_DTYPES[tag]) \
            .reshape(dims).copy()
    (mlen,) = struct.unpack("<I", take(4, "metadata length"))
    meta_text = take(mlen, "metadata").decode("utf-8")
    (declared,) = struct.unpack("<Q", take(8, "checksum"))
    if declared != checksum:
        raise WeightFormatError(
            f"{path}: checksum mismatch (declared {declared}, "
            f"computed {checksum})")
    meta = {}
    for line in meta_text.splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    return tensors, meta


def save_model(path, params):
    save_tensors(path, params.tensors, params.config.to_meta())


def load_model(path, dtype=np.float32):
    from .network import ModelParams, TransformerConfig
    arrays, meta = load_tensors(path)
    try:
        config = TransformerConfig.from_meta(meta)
    except KeyError as e:
        raise WeightFormatError(f"{path}: metadata missing key {e}")
    reference = ModelParams.initialize(config, seed=0, dtype=dtype)
    tensors = {}
    for name, ref in reference.tensors.items():
        if name not in arrays:
            raise WeightFormatError(f"{path}: missing tensor {name!r}")
        arr = arrays[name]
        if arr.shape != ref.shape:
            raise WeightFormatError(
                f"{path}: tensor {name!r} has shape {arr.shape}, "
                f"config implies {ref.shape}")
        tensors[name] = Tensor(arr.astype(dtype), requires_grad=True)
    extra = set(arrays) - set(tensors)
    if extra:
        raise WeightFormatError(
            f"{path}: unexpected tensors {sorted(extra)}")
    return ModelParams(config, tensors)


def save_extractor(path, extractor, seed=None):
    meta = {"kind": "extractor", "layout": extractor.layout(),
            "stages": str(extractor.num_stages)}
    if seed is not None:
        meta["seed"] = str(seed)
    save_tensors(path, extractor.tensors(), meta)


def load_extractor(path):
    from .losses import extractor_from_layout, ExtractorError
    arrays, meta = load_tensors(path)
    if meta.get("kind") != "extractor":
        raise WeightFormatError(f"{path}: not an extractor weight file")
    tensors = {k: Tensor(v) for k, v in arrays.items()}
    try:
        ext = extractor_from_layout(meta["layout"], tensors)
    except ExtractorError as e:
        raise WeightFormatError(f"{path}: {e}")
    if "stages" in meta and int(meta["stages"]) != ext.num_stages:
        raise WeightFormatError(
            f"{path}: declared {meta['stages']} stages, layout has "
            f"{ext.num_stages}")
    return ext
