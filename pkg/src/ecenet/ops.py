"""Differentiable operations over :class:`~ecenet.tensor.Tensor`.

Every op validates shapes, computes the forward value with numpy (or a
backend kernel from :mod:`ecenet.kernels`), and records a gradient closure on
the active tape when any input requires gradients. Elementwise ops follow
numpy broadcasting; their backward pass sums gradients over broadcast axes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _erf

from . import kernels
from .errors import ContractError, DimensionError
from .tensor import Tensor, active_tape

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _record(out: Tensor, parents: tuple, grad_fn, op: str) -> Tensor:
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, grad_fn, op)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = Tensor(a.data + b.data)
    ash, bsh = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _record(out, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = Tensor(a.data - b.data)
    ash, bsh = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _record(out, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(out, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data

    def grad_fn(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _record(out, (a, b), grad_fn, "div")


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    return _record(out, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    s = float(s)
    out = Tensor(x.data * s)
    return _record(out, (x,), lambda g: (g * s,), "scale")


def pow_const(x: Tensor, p: float) -> Tensor:
    p = float(p)
    out = Tensor(x.data ** p)
    xd = x.data

    def grad_fn(g):
        return (g * p * xd ** (p - 1.0),)

    return _record(out, (x,), grad_fn, "pow")


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data))
    od = out.data
    return _record(out, (x,), lambda g: (g * od,), "exp")


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    xd = x.data
    return _record(out, (x,), lambda g: (g / xd,), "log")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_sigmoid_np(x.data))
    od = out.data
    return _record(out, (x,), lambda g: (g * od * (1.0 - od),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)), finite for all finite x."""
    xd = x.data
    out = Tensor(np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd))))

    def grad_fn(g):
        return (g * _sigmoid_np(-xd),)

    return _record(out, (x,), grad_fn, "log_sigmoid")


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    cdf = 0.5 * (1.0 + _erf(xd * _INV_SQRT2))
    out = Tensor(xd * cdf)

    def grad_fn(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (cdf + xd * pdf),)

    return _record(out, (x,), grad_fn, "gelu")


# ---------------------------------------------------------------------------
# linear algebra and convolutions
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), grad_fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map: x (L, in) -> (L, out) with weight (out, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {w.shape}")
    data = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise DimensionError(f"linear: bias {b.shape} vs weight {w.shape}")
        data += b.data
    out = Tensor(data)
    xd, wd = x.data, w.data

    if b is None:
        def grad_fn(g):
            return g @ wd, g.T @ xd

        return _record(out, (x, w), grad_fn, "linear")

    def grad_fn(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _record(out, (x, w, b), grad_fn, "linear")


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-pixel linear map. x:(C_in,H,W) w:(C_out,C_in) b:(C_out,)."""
    if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise DimensionError(
            f"conv1x1: weight {w.shape} does not match input {x.shape}"
        )
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"conv1x1: bias {b.shape} vs weight {w.shape}")
    data = np.tensordot(w.data, x.data, axes=([1], [0]))
    if b is not None:
        data = data + b.data[:, None, None]
    out = Tensor(data)
    xd, wd = x.data, w.data

    if b is None:
        def grad_fn(g):
            return (
                np.tensordot(wd, g, axes=([0], [0])),
                np.tensordot(g, xd, axes=([1, 2], [1, 2])),
            )

        return _record(out, (x, w), grad_fn, "conv1x1")

    def grad_fn(g):
        return (
            np.tensordot(wd, g, axes=([0], [0])),
            np.tensordot(g, xd, axes=([1, 2], [1, 2])),
            g.sum(axis=(1, 2)),
        )

    return _record(out, (x, w, b), grad_fn, "conv1x1")


def dwconv3x3(x: Tensor, k: Tensor) -> Tensor:
    """Depthwise 3x3 correlation, zero padding 1. x:(C,H,W) k:(C,3,3)."""
    if x.ndim != 3:
        raise DimensionError(f"dwconv3x3: input must be C,H,W, got {x.shape}")
    if k.shape != (x.shape[0], 3, 3):
        raise DimensionError(
            f"dwconv3x3: kernel {k.shape} must be ({x.shape[0]}, 3, 3)"
        )
    out = Tensor(kernels.dwconv3x3_forward(x.data, k.data))
    xd, kd = x.data, k.data

    def grad_fn(g):
        return kernels.dwconv3x3_backward(xd, kd, np.ascontiguousarray(g))

    return _record(out, (x, k), grad_fn, "dwconv3x3")


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for {x.shape}")
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), grad_fn, "softmax")


def log_softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"log_softmax: axis {axis} out of range for {x.shape}")
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)
    sm = np.exp(out.data)

    def grad_fn(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), grad_fn, "log_softmax")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g: np.ndarray, shape: tuple, axes, keepdims: bool) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))
    xsh = x.shape

    def grad_fn(g):
        return (_expand_reduced(g, xsh, axes, keepdims).copy(),)

    return _record(out, (x,), grad_fn, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))
    xsh = x.shape
    count = x.size if axes is None else int(np.prod([xsh[a] for a in axes]))

    def grad_fn(g):
        return (_expand_reduced(g, xsh, axes, keepdims) / count,)

    return _record(out, (x,), grad_fn, "mean")


def max(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max reduction; gradient routes to the first (lowest-index) argmax."""
    xd = x.data
    if axis is None:
        out = Tensor(xd.max())
        flat_idx = int(np.argmax(xd))

        def grad_fn(g):
            dx = np.zeros_like(xd)
            dx.flat[flat_idx] = g.reshape(())
            return (dx,)

        return _record(out, (x,), grad_fn, "max")

    ax = axis % x.ndim
    out = Tensor(xd.max(axis=ax, keepdims=keepdims))
    idx = np.expand_dims(np.argmax(xd, axis=ax), ax)

    def grad_fn(g):
        ge = g if keepdims else np.expand_dims(g, ax)
        dx = np.zeros_like(xd)
        np.put_along_axis(dx, idx, ge, axis=ax)
        return (dx,)

    return _record(out, (x,), grad_fn, "max")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    xsh = x.shape
    return _record(out, (x,), lambda g: (g.reshape(xsh),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _record(out, (x,), grad_fn, "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [t for t in tensors]
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    ax = axis % tensors[0].ndim
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        parts = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            parts.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(parts)

    return _record(out, tuple(tensors), grad_fn, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    ax = axis % x.ndim
    if start < 0 or start + length > x.shape[ax]:
        raise DimensionError(
            f"narrow: [{start}, {start + length}) outside extent {x.shape[ax]}"
        )
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(x.data[sl]))
    xsh = x.shape

    def grad_fn(g):
        dx = np.zeros(xsh, dtype=g.dtype)
        dx[sl] = g
        return (dx,)

    return _record(out, (x,), grad_fn, "narrow")


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into equal parts along ``axis``."""
    ax = axis % x.ndim
    if x.shape[ax] % sections != 0:
        raise DimensionError(
            f"split: extent {x.shape[ax]} not divisible into {sections} parts"
        )
    step = x.shape[ax] // sections
    return [narrow(x, ax, i * step, step) for i in range(sections)]


def tile_channels(x: Tensor, reps: int) -> Tensor:
    """Repeat a (C, H, W) map ``reps`` times along the channel axis."""
    if x.ndim != 3:
        raise DimensionError(f"tile_channels: need C,H,W, got {x.shape}")
    if reps < 1:
        raise ContractError(f"tile_channels: reps must be >= 1, got {reps}")
    c, h, w = x.shape
    out = Tensor(np.tile(x.data, (reps, 1, 1)))

    def grad_fn(g):
        return (g.reshape(reps, c, h, w).sum(axis=0),)

    return _record(out, (x,), grad_fn, "tile_channels")


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def adaptive_avg_pool2d(x: Tensor, oh: int, ow: int) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool2d: need C,H,W, got {x.shape}")
    c, h, w = x.shape
    if not (1 <= oh and 1 <= ow):
        raise DimensionError("adaptive_avg_pool2d: output extents must be >= 1")
    if oh > h or ow > w:
        raise DimensionError(
            f"adaptive_avg_pool2d: output {(oh, ow)} larger than input "
            f"{(h, w)} (upsampling is not pooling)"
        )
    out = Tensor(kernels.avgpool2d_forward(x.data, oh, ow))

    def grad_fn(g):
        return (kernels.avgpool2d_backward(np.ascontiguousarray(g), h, w),)

    return _record(out, (x,), grad_fn, "adaptive_avg_pool2d")


def _shuffle_np(x: np.ndarray, r: int) -> np.ndarray:
    cr2, h, w = x.shape
    c = cr2 // (r * r)
    y = x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(y).reshape(c, h * r, w * r)


def _unshuffle_np(x: np.ndarray, r: int) -> np.ndarray:
    c, hr, wr = x.shape
    h, w = hr // r, wr // r
    y = x.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(y).reshape(c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (C*r^2, H, W) into (C, r*H, r*W)."""
    if x.ndim != 3:
        raise DimensionError(f"pixel_shuffle: need C,H,W, got {x.shape}")
    r = int(r)
    if r < 1 or x.shape[0] % (r * r) != 0:
        raise DimensionError(
            f"pixel_shuffle: channels {x.shape[0]} not divisible by r^2={r * r}"
        )
    if r == 1:
        out = Tensor(x.data.copy())
        return _record(out, (x,), lambda g: (g,), "pixel_shuffle")
    out = Tensor(_shuffle_np(x.data, r))
    return _record(out, (x,), lambda g: (_unshuffle_np(g, r),), "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse rearrangement of :func:`pixel_shuffle`."""
    if x.ndim != 3:
        raise DimensionError(f"pixel_unshuffle: need C,H,W, got {x.shape}")
    r = int(r)
    if r < 1 or x.shape[1] % r != 0 or x.shape[2] % r != 0:
        raise DimensionError(
            f"pixel_unshuffle: spatial {x.shape[1:]} not divisible by r={r}"
        )
    if r == 1:
        out = Tensor(x.data.copy())
        return _record(out, (x,), lambda g: (g,), "pixel_unshuffle")
    out = Tensor(_unshuffle_np(x.data, r))
    return _record(out, (x,), lambda g: (_shuffle_np(g, r),), "pixel_unshuffle")


def bilinear_resize(x: Tensor, oh: int, ow: int) -> Tensor:
    """Resize (C,H,W) to (C,oh,ow) with half-pixel bilinear sampling."""
    if x.ndim != 3:
        raise DimensionError(f"bilinear_resize: need C,H,W, got {x.shape}")
    if oh < 1 or ow < 1:
        raise DimensionError("bilinear_resize: output extents must be >= 1")
    c, h, w = x.shape
    out = Tensor(kernels.bilinear_forward(x.data, oh, ow))

    def grad_fn(g):
        return (kernels.bilinear_backward(np.ascontiguousarray(g), h, w),)

    return _record(out, (x,), grad_fn, "bilinear_resize")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple,
               affine_shape: tuple, eps: float, op: str) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gammab = gamma.data.reshape(affine_shape)
    out = Tensor(xhat * gammab + beta.data.reshape(affine_shape))
    reduce_axes = tuple(i for i, s in enumerate(affine_shape) if s == 1)
    gsh = gamma.shape

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=reduce_axes).reshape(gsh)
        dbeta = g.sum(axis=reduce_axes).reshape(gsh)
        gg = g * gammab
        dx = inv * (
            gg
            - gg.mean(axis=axes, keepdims=True)
            - xhat * (gg * xhat).mean(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), grad_fn, op)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learned affine."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layernorm: affine {gamma.shape}/{beta.shape} vs width {c}"
        )
    shape = (1,) * (x.ndim - 1) + (c,)
    return _normalize(x, gamma, beta, (x.ndim - 1,), shape, eps, "layernorm")


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over spatial positions of a (C,H,W) map."""
    if x.ndim != 3:
        raise DimensionError(f"channel_norm: need C,H,W, got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"channel_norm: affine {gamma.shape}/{beta.shape} vs channels {c}"
        )
    return _normalize(x, gamma, beta, (1, 2), (c, 1, 1), eps, "channel_norm")


# ---------------------------------------------------------------------------
# layout helpers
# ---------------------------------------------------------------------------

def spatial_to_tokens(x: Tensor) -> Tensor:
    """(C,H,W) -> (H*W, C) with row-major pixel order."""
    c = x.shape[0]
    return transpose(reshape(x, (c, x.shape[1] * x.shape[2])))


def tokens_to_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """(L,C) -> (C,h,w); requires L == h*w."""
    if x.shape[0] != h * w:
        raise DimensionError(f"tokens_to_spatial: L={x.shape[0]} != {h}*{w}")
    return reshape(transpose(x), (x.shape[1], h, w))


# attach operator sugar to Tensor
Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
