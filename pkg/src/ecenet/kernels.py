"""Hot numeric kernels: depthwise 3x3 convolution, adaptive average pooling,
and bilinear resizing, each with a numba-jitted implementation and a pure
numpy fallback.

The active backend is chosen at import time from the ``ECENET_BACKEND``
environment variable: ``numba`` (require the jit path), ``numpy`` (force the
fallback), or ``auto`` (default: numba when importable). All kernels preserve
the input dtype and are deterministic; the two backends agree to within a few
ulps (the accumulation order differs only for pooled / scattered sums).

``benchmarks/bench_kernels.py`` times both backends side by side.
"""

from __future__ import annotations

import os

import numpy as np

BACKEND_ENV = "ECENET_BACKEND"

_requested = os.environ.get(BACKEND_ENV, "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"{BACKEND_ENV} must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

njit = None
if _requested in ("auto", "numba"):
    try:
        from numba import njit  # type: ignore
    except ImportError:
        if _requested == "numba":
            raise RuntimeError(f"{BACKEND_ENV}=numba but numba is not importable")
        njit = None

HAVE_NUMBA = njit is not None
ACTIVE_BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------

def dwconv3x3_forward_numpy(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Channel-wise 3x3 correlation with zero padding of 1. x:(C,H,W) k:(C,3,3)."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            out += k[:, di, dj][:, None, None] * xp[:, di:di + h, dj:dj + w]
    return out


def dwconv3x3_backward_numpy(x, k, g):
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(k)
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + h, dj:dj + w] += k[:, di, dj][:, None, None] * g
            dk[:, di, dj] = np.sum(g * xp[:, di:di + h, dj:dj + w], axis=(1, 2))
    return np.ascontiguousarray(dxp[:, 1:-1, 1:-1]), dk


def _bins(n_in: int, n_out: int):
    starts = [(i * n_in) // n_out for i in range(n_out)]
    stops = [((i + 1) * n_in + n_out - 1) // n_out for i in range(n_out)]
    return starts, stops


def avgpool2d_forward_numpy(x: np.ndarray, oh: int, ow: int) -> np.ndarray:
    c, h, w = x.shape
    r0, r1 = _bins(h, oh)
    c0, c1 = _bins(w, ow)
    out = np.empty((c, oh, ow), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            out[:, i, j] = x[:, r0[i]:r1[i], c0[j]:c1[j]].mean(axis=(1, 2))
    return out


def avgpool2d_backward_numpy(g: np.ndarray, h: int, w: int) -> np.ndarray:
    c, oh, ow = g.shape
    r0, r1 = _bins(h, oh)
    c0, c1 = _bins(w, ow)
    dx = np.zeros((c, h, w), dtype=g.dtype)
    for i in range(oh):
        for j in range(ow):
            n = (r1[i] - r0[i]) * (c1[j] - c0[j])
            dx[:, r0[i]:r1[i], c0[j]:c1[j]] += (g[:, i, j] / n)[:, None, None]
    return dx


def _resize_coords(n_in: int, n_out: int):
    """Half-pixel source coordinates; returns (lo index, hi index, hi weight)."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_forward_numpy(x: np.ndarray, oh: int, ow: int) -> np.ndarray:
    c, h, w = x.shape
    i0, i1, fy = _resize_coords(h, oh)
    j0, j1, fx = _resize_coords(w, ow)
    fy = fy[:, None]
    fx = fx[None, :]
    top = x[:, i0][:, :, j0] * (1.0 - fx) + x[:, i0][:, :, j1] * fx
    bot = x[:, i1][:, :, j0] * (1.0 - fx) + x[:, i1][:, :, j1] * fx
    out = top * (1.0 - fy) + bot * fy
    return out.astype(x.dtype, copy=False)


def bilinear_backward_numpy(g: np.ndarray, h: int, w: int) -> np.ndarray:
    c, oh, ow = g.shape
    i0, i1, fy = _resize_coords(h, oh)
    j0, j1, fx = _resize_coords(w, ow)
    fy = fy[:, None]
    fx = fx[None, :]
    dx = np.zeros((c, h, w), dtype=np.float64)
    g64 = g.astype(np.float64, copy=False)
    ii0 = np.broadcast_to(i0[:, None], (oh, ow))
    ii1 = np.broadcast_to(i1[:, None], (oh, ow))
    jj0 = np.broadcast_to(j0[None, :], (oh, ow))
    jj1 = np.broadcast_to(j1[None, :], (oh, ow))
    for ci in range(c):
        np.add.at(dx[ci], (ii0, jj0), g64[ci] * (1.0 - fy) * (1.0 - fx))
        np.add.at(dx[ci], (ii0, jj1), g64[ci] * (1.0 - fy) * fx)
        np.add.at(dx[ci], (ii1, jj0), g64[ci] * fy * (1.0 - fx))
        np.add.at(dx[ci], (ii1, jj1), g64[ci] * fy * fx)
    return dx.astype(g.dtype, copy=False)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def dwconv3x3_forward_numba(x, k):  # pragma: no cover - exercised via parity tests
        c, h, w = x.shape
        out = np.zeros_like(x)
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    s = out[ci, i, j]
                    for di in range(3):
                        ii = i + di - 1
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(3):
                            jj = j + dj - 1
                            if jj < 0 or jj >= w:
                                continue
                            s += k[ci, di, dj] * x[ci, ii, jj]
                    out[ci, i, j] = s
        return out

    @njit(cache=True)
    def dwconv3x3_backward_numba(x, k, g):  # pragma: no cover
        c, h, w = x.shape
        dx = np.zeros_like(x)
        dk = np.zeros_like(k)
        for ci in range(c):
            for di in range(3):
                for dj in range(3):
                    acc = dk[ci, di, dj]
                    kv = k[ci, di, dj]
                    for i in range(h):
                        ii = i + di - 1
                        if ii < 0 or ii >= h:
                            continue
                        for j in range(w):
                            jj = j + dj - 1
                            if jj < 0 or jj >= w:
                                continue
                            gv = g[ci, i, j]
                            acc += gv * x[ci, ii, jj]
                            dx[ci, ii, jj] += gv * kv
                    dk[ci, di, dj] = acc
        return dx, dk

    @njit(cache=True)
    def avgpool2d_forward_numba(x, oh, ow):  # pragma: no cover
        c, h, w = x.shape
        out = np.zeros((c, oh, ow), dtype=x.dtype)
        for i in range(oh):
            r0 = (i * h) // oh
            r1 = ((i + 1) * h + oh - 1) // oh
            for j in range(ow):
                c0 = (j * w) // ow
                c1 = ((j + 1) * w + ow - 1) // ow
                n = (r1 - r0) * (c1 - c0)
                for ci in range(c):
                    s = out[ci, i, j]
                    for r in range(r0, r1):
                        for cc in range(c0, c1):
                            s += x[ci, r, cc]
                    out[ci, i, j] = s / n
        return out

    @njit(cache=True)
    def avgpool2d_backward_numba(g, h, w):  # pragma: no cover
        c, oh, ow = g.shape
        dx = np.zeros((c, h, w), dtype=g.dtype)
        for i in range(oh):
            r0 = (i * h) // oh
            r1 = ((i + 1) * h + oh - 1) // oh
            for j in range(ow):
                c0 = (j * w) // ow
                c1 = ((j + 1) * w + ow - 1) // ow
                n = (r1 - r0) * (c1 - c0)
                for ci in range(c):
                    v = g[ci, i, j] / n
                    for r in range(r0, r1):
                        for cc in range(c0, c1):
                            dx[ci, r, cc] += v
        return dx

    @njit(cache=True)
    def bilinear_forward_numba(x, oh, ow):  # pragma: no cover
        c, h, w = x.shape
        out = np.zeros((c, oh, ow), dtype=x.dtype)
        sy = h / oh
        sx = w / ow
        for i in range(oh):
            src_i = (i + 0.5) * sy - 0.5
            if src_i < 0.0:
                src_i = 0.0
            if src_i > h - 1.0:
                src_i = h - 1.0
            i0 = int(np.floor(src_i))
            i1 = min(i0 + 1, h - 1)
            fy = src_i - i0
            for j in range(ow):
                src_j = (j + 0.5) * sx - 0.5
                if src_j < 0.0:
                    src_j = 0.0
                if src_j > w - 1.0:
                    src_j = w - 1.0
                j0 = int(np.floor(src_j))
                j1 = min(j0 + 1, w - 1)
                fx = src_j - j0
                for ci in range(c):
                    top = x[ci, i0, j0] * (1.0 - fx) + x[ci, i0, j1] * fx
                    bot = x[ci, i1, j0] * (1.0 - fx) + x[ci, i1, j1] * fx
                    out[ci, i, j] = top * (1.0 - fy) + bot * fy
        return out

    @njit(cache=True)
    def bilinear_backward_numba(g, h, w):  # pragma: no cover
        c, oh, ow = g.shape
        dx = np.zeros((c, h, w), dtype=g.dtype)
        sy = h / oh
        sx = w / ow
        for i in range(oh):
            src_i = (i + 0.5) * sy - 0.5
            if src_i < 0.0:
                src_i = 0.0
            if src_i > h - 1.0:
                src_i = h - 1.0
            i0 = int(np.floor(src_i))
            i1 = min(i0 + 1, h - 1)
            fy = src_i - i0
            for j in range(ow):
                src_j = (j + 0.5) * sx - 0.5
                if src_j < 0.0:
                    src_j = 0.0
                if src_j > w - 1.0:
                    src_j = w - 1.0
                j0 = int(np.floor(src_j))
                j1 = min(j0 + 1, w - 1)
                fx = src_j - j0
                for ci in range(c):
                    gv = g[ci, i, j]
                    dx[ci, i0, j0] += gv * (1.0 - fy) * (1.0 - fx)
                    dx[ci, i0, j1] += gv * (1.0 - fy) * fx
                    dx[ci, i1, j0] += gv * fy * (1.0 - fx)
                    dx[ci, i1, j1] += gv * fy * fx
        return dx


NUMPY_KERNELS = {
    "dwconv3x3_forward": dwconv3x3_forward_numpy,
    "dwconv3x3_backward": dwconv3x3_backward_numpy,
    "avgpool2d_forward": avgpool2d_forward_numpy,
    "avgpool2d_backward": avgpool2d_backward_numpy,
    "bilinear_forward": bilinear_forward_numpy,
    "bilinear_backward": bilinear_backward_numpy,
}

if HAVE_NUMBA:
    NUMBA_KERNELS = {
        "dwconv3x3_forward": dwconv3x3_forward_numba,
        "dwconv3x3_backward": dwconv3x3_backward_numba,
        "avgpool2d_forward": avgpool2d_forward_numba,
        "avgpool2d_backward": avgpool2d_backward_numba,
        "bilinear_forward": bilinear_forward_numba,
        "bilinear_backward": bilinear_backward_numba,
    }
else:
    NUMBA_KERNELS = None

_active = NUMBA_KERNELS if HAVE_NUMBA else NUMPY_KERNELS

dwconv3x3_forward = _active["dwconv3x3_forward"]
dwconv3x3_backward = _active["dwconv3x3_backward"]
avgpool2d_forward = _active["avgpool2d_forward"]
avgpool2d_backward = _active["avgpool2d_backward"]
bilinear_forward = _active["bilinear_forward"]
bilinear_backward = _active["bilinear_backward"]


def warmup():
    """Trigger jit compilation for both dtypes so timings exclude it."""
    for dt in (np.float32, np.float64):
        x = np.ones((2, 5, 4), dtype=dt)
        k = np.ones((2, 3, 3), dtype=dt)
        g = np.ones_like(x)
        dwconv3x3_forward(x, k)
        dwconv3x3_backward(x, k, g)
        p = avgpool2d_forward(x, 2, 2)
        avgpool2d_backward(p, 5, 4)
        r = bilinear_forward(x, 7, 9)
        bilinear_backward(r, 5, 4)
