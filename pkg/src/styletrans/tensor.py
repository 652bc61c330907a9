"""Minimal dense tensor with reverse-mode automatic differentiation.

Covers exactly the primitives the style-transfer pipeline needs: matmul,
elementwise arithmetic, relu, softmax over the last axis, reductions,
reshape/transpose/concat/slice, zero padding, adaptive average pooling,
2x pooling/upsampling and value clamping. Arrays are numpy-backed; the
graph bookkeeping and every backward rule live here.

Broadcasting is deliberately narrow: scalars and trailing-dimension
(per-channel) broadcasts only, which is all the pipeline uses.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None,
                 _parents=(), _backward=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"

    # -- graph ---------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tslice(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _needs_graph(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise -------------------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out = Tensor(a.data + b.data)
    if _needs_graph(a, b):
        def bw(g):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))
        out._parents, out._backward = (a, b), bw
        out.requires_grad = True
    return out


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out = Tensor(a.data * b.data)
    if _needs_graph(a, b):
        def bw(g):
            _accum(a, _unbroadcast(g * b.data, a.shape))
            _accum(b, _unbroadcast(g * a.data, b.shape))
        out._parents, out._backward = (a, b), bw
        out.requires_grad = True
    return out


def power(a, p):
    """Elementwise a**p for a scalar exponent p.

    The p<1 backward is guarded at exactly zero to keep sqrt-style usage
    from producing infinities.
    """
    p = float(p)
    out = Tensor(a.data ** p)
    if _needs_graph(a):
        def bw(g):
            base = a.data
            if p < 1.0:
                zero = base == 0.0
                d = p * np.where(zero, 1.0, base) ** (p - 1.0)
                d = np.where(zero, 0.0, d)
            else:
                d = p * base ** (p - 1.0)
            _accum(a, g * d)
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0))
    if _needs_graph(a):
        def bw(g):
            _accum(a, g * (a.data > 0.0))
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def clamp01(a):
    """Clamp to [0,1]; gradient passes only inside the closed interval."""
    out = Tensor(np.clip(a.data, 0.0, 1.0))
    if _needs_graph(a):
        def bw(g):
            inside = (a.data >= 0.0) & (a.data <= 1.0)
            _accum(a, g * inside)
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


# -- linear algebra ----------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    if _needs_graph(a, b):
        def bw(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        out._parents, out._backward = (a, b), bw
        out.requires_grad = True
    return out


def softmax_lastdim(a):
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)
    if _needs_graph(a):
        def bw(g):
            dot = (g * s).sum(axis=-1, keepdims=True)
            _accum(a, s * (g - dot))
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


# -- reductions --------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    if _needs_graph(a):
        def bw(g):
            if axis is None:
                _accum(a, np.broadcast_to(g.reshape(()), a.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape).copy())
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return tsum(a, axis, keepdims) * (1.0 / n)


# -- shape manipulation ------------------------------------------------

def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))
    if _needs_graph(a):
        def bw(g):
            _accum(a, g.reshape(a.shape))
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def transpose(a, axes=None):
    out = Tensor(a.data.transpose(axes))
    if _needs_graph(a):
        def bw(g):
            if axes is None:
                _accum(a, g.transpose())
            else:
                _accum(a, g.transpose(np.argsort(axes)))
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def concat_lastdim(parts):
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    if _needs_graph(*parts):
        sizes = [p.shape[-1] for p in parts]
        def bw(g):
            off = 0
            for p, sz in zip(parts, sizes):
                _accum(p, g[..., off:off + sz])
                off += sz
        out._parents, out._backward = tuple(parts), bw
        out.requires_grad = True
    return out


def tslice(a, idx):
    out = Tensor(a.data[idx])
    if _needs_graph(a):
        def bw(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            _accum(a, full)
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def pad2d(a, p):
    """Zero-pad the first two (spatial) axes of an H x W x C tensor by p."""
    widths = ((p, p), (p, p)) + ((0, 0),) * (a.ndim - 2)
    out = Tensor(np.pad(a.data, widths))
    if _needs_graph(a):
        H, W = a.shape[:2]
        def bw(g):
            _accum(a, g[p:p + H, p:p + W])
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


# -- spatial primitives ------------------------------------------------

def _pool_bounds(n_in, n_out):
    edges = [(i * n_in) // n_out for i in range(n_out + 1)]
    return list(zip(edges[:-1], edges[1:]))


def avgpool_adaptive(a, out_h, out_w):
    """Adaptive average pooling over the first two axes of H x W x C.

    Cell (i, j) spans rows floor(i*H/out_h)..floor((i+1)*H/out_h) and the
    analogous columns.
    """
    H, W = a.shape[:2]
    if H < out_h or W < out_w:
        raise ShapeError(
            f"avgpool_adaptive: input {H}x{W} smaller than output grid "
            f"{out_h}x{out_w}")
    rows = _pool_bounds(H, out_h)
    cols = _pool_bounds(W, out_w)
    res = np.empty((out_h, out_w) + a.shape[2:], dtype=a.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            res[i, j] = a.data[r0:r1, c0:c1].mean(axis=(0, 1))
    out = Tensor(res)
    if _needs_graph(a):
        def bw(g):
            gi = np.zeros_like(a.data)
            for i, (r0, r1) in enumerate(rows):
                for j, (c0, c1) in enumerate(cols):
                    gi[r0:r1, c0:c1] += g[i, j] / ((r1 - r0) * (c1 - c0))
            _accum(a, gi)
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def upsample_nearest_2x(a):
    out = Tensor(np.repeat(np.repeat(a.data, 2, axis=0), 2, axis=1))
    if _needs_graph(a):
        H, W = a.shape[:2]
        def bw(g):
            _accum(a, g.reshape((H, 2, W, 2) + a.shape[2:]).sum(axis=(1, 3)))
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def maxpool_2x2(a):
    """2x2 max pooling with stride 2; spatial dims must be even."""
    H, W = a.shape[:2]
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool_2x2: odd spatial dims {H}x{W}")
    blocks = a.data.reshape((H // 2, 2, W // 2, 2) + a.shape[2:])
    res = blocks.max(axis=(1, 3))
    out = Tensor(res)
    if _needs_graph(a):
        def bw(g):
            mask = blocks == res[:, None, :, None]
            # split ties evenly so the gradient stays a partition of g
            cnt = mask.sum(axis=(1, 3), keepdims=True)
            gb = mask * (g[:, None, :, None] / cnt)
            _accum(a, gb.reshape(a.shape))
        out._parents, out._backward = (a,), bw
        out.requires_grad = True
    return out


def avgpool_2x2(a):
    H, W = a.shape[:2]
    if H % 2 or W % 2:
        raise ShapeError(f"avgpool_2x2: odd spatial dims {H}x{W}")
    return avgpool_adaptive(a, H // 2, W // 2)


# -- composite layers --------------------------------------------------

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the trailing channel axis, then scale and shift."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(
            f"layer_norm: channel dim {C} vs gamma {gamma.shape}, "
            f"beta {beta.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = tmean(xc * xc, axis=-1, keepdims=True)
    inv = power(var + eps, -0.5)
    return xc * inv * gamma + beta


def conv2d_1x1(x, w, b=None):
    """Pointwise convolution on H x W x Cin with weight Cin x Cout."""
    H, W, Cin = x.shape
    y = matmul(reshape(x, (H * W, Cin)), w)
    if b is not None:
        y = y + b
    return reshape(y, (H, W, w.shape[1]))


def conv2d_3x3_pad1(x, w, b=None):
    """3x3 convolution, zero padding 1, on H x W x Cin.

    Weight shape is (3, 3, Cin, Cout). Built from pad/slice/matmul so the
    backward pass comes from the existing primitives.
    """
    H, W, Cin = x.shape
    if w.shape[:3] != (3, 3, Cin):
        raise ShapeError(f"conv2d_3x3: weight {w.shape} vs input {x.shape}")
    Cout = w.shape[3]
    xp = pad2d(x, 1)
    acc = None
    for dy in range(3):
        for dx in range(3):
            patch = reshape(xp[dy:dy + H, dx:dx + W, :], (H * W, Cin))
            term = matmul(patch, reshape(w[dy, dx], (Cin, Cout)))
            acc = term if acc is None else acc + term
    if b is not None:
        acc = acc + b
    return reshape(acc, (H, W, Cout))


def bilinear_weight_matrix(in_h, in_w, out_h, out_w, dtype=np.float64):
    """Dense interpolation matrix mapping an in_h*in_w grid to out_h*out_w.

    Align-corners coordinate mapping: output index i lands at source
    coordinate i*(in-1)/(out-1); a single-point axis collapses to 0.
    Rows are convex combinations of at most 4 source nodes.
    """
    A = np.zeros((out_h * out_w, in_h * in_w), dtype=dtype)

    def axis_coords(n_out, n_in):
        if n_out == 1:
            return [(0, 0, 1.0)]
        res = []
        for i in range(n_out):
            src = i * (n_in - 1) / (n_out - 1)
            lo = min(int(np.floor(src)), n_in - 1)
            hi = min(lo + 1, n_in - 1)
            t = src - lo
            res.append((lo, hi, 1.0 - t))
        return res

    ys = axis_coords(out_h, in_h)
    xs = axis_coords(out_w, in_w)
    for i, (y0, y1, wy) in enumerate(ys):
        for j, (x0, x1, wx) in enumerate(xs):
            row = i * out_w + j
            A[row, y0 * in_w + x0] += wy * wx
            A[row, y0 * in_w + x1] += wy * (1.0 - wx)
            A[row, y1 * in_w + x0] += (1.0 - wy) * wx
            A[row, y1 * in_w + x1] += (1.0 - wy) * (1.0 - wx)
    return A


def interp_bilinear_aligned(x, out_h, out_w):
    """Resize an in_h x in_w x C tensor with align-corners bilinear weights."""
    in_h, in_w, C = x.shape
    A = Tensor(bilinear_weight_matrix(in_h, in_w, out_h, out_w,
                                      dtype=x.dtype))
    flat = matmul(A, reshape(x, (in_h * in_w, C)))
    return reshape(flat, (out_h, out_w, C))
