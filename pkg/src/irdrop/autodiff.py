"""Minimal dense tensor engine with reverse-mode differentiation.

Define-by-run tape over numpy arrays: each op builds the forward value and
a closure that accumulates exact gradients into its inputs. The op set is
exactly what the prediction model needs; training runs in float32, the
finite-difference gradient checker in float64.
"""

from __future__ import annotations

import math
import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(Exception):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {shapes}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse pass from a scalar output; visits each node once."""
        if self.data.size != 1:
            raise ShapeMismatch("backward", self.shape)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.grad is not None})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape` (bias-style adds)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents,
                  backward=backward if req else None)


# ---------------------------------------------------------------- basic ops

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))
    return _make(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))
    return _make(out, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    def back(g):
        if a.requires_grad:
            a._accumulate(g * s)
    return _make(a.data * s, (a,), back)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)
    return _make(out, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose", a.shape)

    def back(g):
        if a.requires_grad:
            a._accumulate(g.T)
    return _make(a.data.T, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    def back(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))
    return _make(a.data.reshape(shape), (a,), back)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    parts = [t.data for t in tensors]
    out = np.concatenate(parts, axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def back(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                t._accumulate(g[tuple(sl)])
            offset += size
    return _make(out, tuple(tensors), back)


def tsum(a: Tensor) -> Tensor:
    def back(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))
    return _make(np.array(a.data.sum(), dtype=a.data.dtype), (a,), back)


# ------------------------------------------------------------ nonlinearities

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        if a.requires_grad:
            a._accumulate(g * mask)
    return _make(a.data * mask, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out))
    return _make(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            a._accumulate(out * (g - dot))
    return _make(out, (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine with gamma/beta."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def back(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (dxhat - m1 - xhat * m2))
    return _make(out, (x, gamma, beta), back)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch("mse_loss", pred.shape, target.shape)
    diff = pred.data - target.data
    out = np.array((diff * diff).mean(), dtype=pred.data.dtype)

    def back(g):
        coeff = 2.0 * float(g) / diff.size
        if pred.requires_grad:
            pred._accumulate(coeff * diff)
        if target.requires_grad:
            target._accumulate(-coeff * diff)
    return _make(out, (pred, target), back)


# ------------------------------------------------------------- spatial ops

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """x: (N,C,H,W), w: (O,C,k,k), b: (O,). Stride 1 or 2."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch("conv2d", x.shape, w.shape)
    if stride not in (1, 2):
        raise ValueError("conv2d supports stride 1 or 2")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,ocij->nohw", win, w.data,
                    optimize=True) + b.data[None, :, None, None]
    oh, ow = out.shape[2], out.shape[3]

    def back(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate(np.einsum("nohw,nchwij->ocij", g, win, optimize=True))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    patch = np.einsum("nohw,oc->nchw", g, w.data[:, :, i, j],
                                      optimize=True)
                    dxp[:, :, i:i + stride * oh:stride,
                        j:j + stride * ow:stride] += patch
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)
    return _make(out, (x, w, b), back)


def transpose_conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-2, kernel-2 upsampling deconvolution (non-overlapping).

    x: (N,C,H,W), w: (C,O,2,2), b: (O,) -> (N,O,2H,2W).
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch("transpose_conv2d", x.shape, w.shape)
    n, c, h, wd = x.shape
    o = w.shape[1]
    y = np.einsum("nchw,coij->nohiwj", x.data, w.data, optimize=True)
    out = y.reshape(n, o, 2 * h, 2 * wd) + b.data[None, :, None, None]

    def back(g):
        gr = g.reshape(n, o, h, 2, wd, 2)
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate(np.einsum("nchw,nohiwj->coij", x.data, gr,
                                    optimize=True))
        if x.requires_grad:
            x._accumulate(np.einsum("nohiwj,coij->nchw", gr, w.data,
                                    optimize=True))
    return _make(out, (x, w, b), back)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2, stride-2 max pooling on (N,C,H,W) with even H, W."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch("max_pool2d", x.shape)
    xr = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    flat = xr.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], g[..., None], axis=-1)
        dx = dflat.reshape(n, c, h // 2, w // 2, 2, 2) \
                  .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        if x.requires_grad:
            x._accumulate(dx)
    return _make(out, (x,), back)


def upsample2_nearest(x: Tensor) -> Tensor:
    """Non-learnable 2x nearest-neighbor upsample on (N,C,H,W)."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        n, c, h2, w2 = g.shape
        gr = g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        if x.requires_grad:
            x._accumulate(gr)
    return _make(out, (x,), back)


# ---------------------------------------------------------------- attention

def attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
              x_kv: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention, Y = softmax(Q K^T / sqrt(d)) V.

    Self-attention by default; pass x_kv for the cross-attention variant
    (queries from x, keys/values from x_kv).
    """
    kv = x if x_kv is None else x_kv
    q = matmul(x, wq)
    k = matmul(kv, wk)
    v = matmul(kv, wv)
    d_alpha = wq.shape[1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_alpha))
    return matmul(softmax(scores, axis=-1), v)


# ------------------------------------------------------------ grad checking

def grad_check(f, at: Tensor, h: float = 1e-5,
               max_coords: int | None = None) -> float:
    """Max relative error between backward gradients and central differences.

    f must map `at` to a scalar Tensor; use float64 data for meaningful
    results. max_coords limits the number of perturbed coordinates (the
    first N in flat order) for expensive functions.
    """
    at.zero_grad()
    out = f(at)
    out.backward()
    analytic = at.grad.copy()
    numeric = analytic.copy()
    flat = at.data.reshape(-1)
    nflat = numeric.reshape(-1)
    n_check = flat.size if max_coords is None else min(max_coords, flat.size)
    for i in range(n_check):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(at).data)
        flat[i] = orig - h
        dn = float(f(at).data)
        flat[i] = orig
        nflat[i] = (up - dn) / (2.0 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


# ----------------------------------------------------------- checkpoint I/O

_CKPT_MAGIC = b"IRCK"
_CKPT_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    """Named-tensor archive: little-endian header + float32 payloads."""
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<HI", _CKPT_VERSION, len(params)))
        for name, t in params.items():
            enc = name.encode("utf-8")
            arr = np.asarray(t.data, dtype="<f4")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, Tensor]:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint archive")
        version, count = struct.unpack("<HI", f.read(6))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            params[name] = Tensor(data.astype(np.float32), requires_grad=True)
        return params
