"""Parameterized building blocks: linear layers, SE recalibration, the
depthwise-conv MLP, scaled dot-product attention, and ghost expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class LinearLayer:
    """Affine map with weight (out, in) and bias (out,)."""

    weight: Tensor
    bias: Tensor

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        """Apply to (L, in) rows -> (L, out)."""
        return ops.linear(x, self.weight, self.bias)


@dataclass
class NormAffine:
    """Learned scale/shift used by layernorm and channel norm."""

    gamma: Tensor
    beta: Tensor


@dataclass
class SEBlock:
    reduce: LinearLayer
    expand: LinearLayer
    ratio: int


@dataclass
class AttentionParams:
    q: LinearLayer
    k: LinearLayer
    v: LinearLayer
    out: LinearLayer
    heads: int

    @property
    def head_dim(self) -> int:
        return self.q.out_dim // self.heads


@dataclass
class MLPBlock:
    layer1: LinearLayer
    dw_kernel: Tensor
    layer2: LinearLayer


@dataclass
class GhostParams:
    """Kernels for the cheap depthwise transforms; None when factor == 1."""

    factor: int
    kernels: Tensor | None


class ParamFactory:
    """Seeded parameter initialization.

    Linear/conv weights are uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)],
    biases zero, norm affines ones/zeros.
    """

    def __init__(self, rng: np.random.Generator | int, dtype=np.float64):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.rng = rng
        self.dtype = np.dtype(dtype)

    def _uniform(self, shape, fan_in: int) -> np.ndarray:
        bound = math.sqrt(1.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def linear(self, out_dim: int, in_dim: int, zero: bool = False) -> LinearLayer:
        if zero:
            w = np.zeros((out_dim, in_dim), dtype=self.dtype)
        else:
            w = self._uniform((out_dim, in_dim), in_dim)
        b = np.zeros(out_dim, dtype=self.dtype)
        return LinearLayer(Tensor(w, trainable=True), Tensor(b, trainable=True))

    def dw_kernel(self, channels: int) -> Tensor:
        return Tensor(self._uniform((channels, 3, 3), 9), trainable=True)

    def norm_affine(self, channels: int) -> NormAffine:
        return NormAffine(
            Tensor(np.ones(channels, dtype=self.dtype), trainable=True),
            Tensor(np.zeros(channels, dtype=self.dtype), trainable=True),
        )

    def se_block(self, channels: int, ratio: int = 4) -> SEBlock:
        hidden = max(1, channels // ratio)
        return SEBlock(
            reduce=self.linear(hidden, channels),
            expand=self.linear(channels, hidden),
            ratio=ratio,
        )

    def attention(self, width: int, heads: int) -> AttentionParams:
        if width % heads != 0:
            raise ContractError(f"attention width {width} not divisible by {heads} heads")
        return AttentionParams(
            q=self.linear(width, width),
            k=self.linear(width, width),
            v=self.linear(width, width),
            out=self.linear(width, width),
            heads=heads,
        )

    def mlp(self, width: int, ratio: int = 4) -> MLPBlock:
        hidden = width * ratio
        return MLPBlock(
            layer1=self.linear(hidden, width),
            dw_kernel=self.dw_kernel(hidden),
            layer2=self.linear(width, hidden),
        )

    def ghost(self, channels: int, factor: int) -> GhostParams:
        if factor < 1:
            raise ContractError(f"ghost factor must be >= 1, got {factor}")
        if factor == 1:
            return GhostParams(factor=1, kernels=None)
        return GhostParams(
            factor=factor,
            kernels=Tensor(self._uniform(((factor - 1) * channels, 3, 3), 9),
                           trainable=True),
        )


def se_forward(x: Tensor, p: SEBlock) -> Tensor:
    """Channel recalibration: x[c] * sigmoid(expand(gelu(reduce(mean(x))))[c])."""
    if x.ndim != 3 or x.shape[0] != p.reduce.in_dim:
        raise DimensionError(
            f"se_forward: input {x.shape} vs block width {p.reduce.in_dim}"
        )
    c = x.shape[0]
    pooled = ops.reshape(ops.mean(x, axis=(1, 2)), (1, c))
    gate = ops.sigmoid(p.expand(ops.gelu(p.reduce(pooled))))
    return ops.mul(x, ops.reshape(gate, (c, 1, 1)))


def scaled_attention(q_in: Tensor, kv_in: Tensor,
                     p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Multi-head attention of L query rows over N key/value rows.

    Returns (output (L,C), similarity (L,N)) where the similarity is the
    head-averaged pre-softmax scaled score.
    """
    if q_in.ndim != 2 or kv_in.ndim != 2:
        raise DimensionError("scaled_attention: inputs must be (rows, width)")
    if q_in.shape[0] == 0 or kv_in.shape[0] == 0:
        raise ContractError("scaled_attention: empty query or key set")
    if q_in.shape[1] != p.q.in_dim or kv_in.shape[1] != p.k.in_dim:
        raise DimensionError(
            f"scaled_attention: widths {q_in.shape[1]}/{kv_in.shape[1]} "
            f"vs params {p.q.in_dim}"
        )
    q = p.q(q_in)
    k = p.k(kv_in)
    v = p.v(kv_in)
    inv_scale = 1.0 / math.sqrt(p.head_dim)

    q_heads = ops.split(q, p.heads, axis=1)
    k_heads = ops.split(k, p.heads, axis=1)
    v_heads = ops.split(v, p.heads, axis=1)

    head_outs = []
    sim_sum = None
    for qh, kh, vh in zip(q_heads, k_heads, v_heads):
        scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), inv_scale)
        head_outs.append(ops.matmul(ops.softmax(scores, axis=1), vh))
        sim_sum = scores if sim_sum is None else ops.add(sim_sum, scores)

    out = p.out(ops.concat(head_outs, axis=1))
    sim = ops.scale(sim_sum, 1.0 / p.heads)
    return out, sim


def mlp_forward(x: Tensor, p: MLPBlock, h: int, w: int) -> Tensor:
    """Three-layer MLP with a depthwise 3x3 conv on the hidden activations."""
    if x.shape[0] != h * w:
        raise DimensionError(f"mlp_forward: L={x.shape[0]} != {h}*{w}")
    hidden = ops.gelu(p.layer1(x))
    grid = ops.tokens_to_spatial(hidden, h, w)
    grid = ops.gelu(ops.dwconv3x3(grid, p.dw_kernel))
    return p.layer2(ops.spatial_to_tokens(grid))


def ghost_expand(x: Tensor, p: GhostParams) -> Tensor:
    """Concat x with factor-1 cheap depthwise transforms of x along channels."""
    if p.factor < 1:
        raise ContractError("ghost_expand: factor must be >= 1")
    if p.factor == 1:
        return x
    tiled = ops.tile_channels(x, p.factor - 1)
    cheap = ops.dwconv3x3(tiled, p.kernels)
    return ops.concat([x, cheap], axis=0)
