"""Explicit class extraction: mask head over stage-4 features and pyramid
pooling of mask logits into class embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import LinearLayer, ParamFactory
from .errors import ContractError, DataError, DimensionError
from .tensor import Tensor


@dataclass
class MaskStack:
    """Per-class mask logits (N, H, W) with a tag for the producing stage."""

    logits: Tensor
    stage: int

    @property
    def n_classes(self) -> int:
        return self.logits.shape[0]


@dataclass
class ClassEmbeddings:
    """Explicit class embedding matrix (N, C)."""

    g: Tensor
    provenance: str = "init"


@dataclass
class MaskHeadParams:
    phi1: LinearLayer  # 1x1 conv C -> C, no activation
    phi2: LinearLayer  # 1x1 conv C -> N, no activation


@dataclass
class ECEParams:
    psi: LinearLayer        # shared projection D_pool -> C
    levels: tuple = field(default_factory=tuple)

    @property
    def pooled_dim(self) -> int:
        return sum(s * s for s in self.levels)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def pyramid_levels(alpha: float, n_classes: int) -> list[int]:
    """Doubling pyramid {1, 2, 4, ...} capped and topped with round(alpha*sqrt(N))."""
    if alpha <= 0:
        raise ContractError(f"alpha must be positive, got {alpha}")
    if n_classes < 1:
        raise ContractError(f"n_classes must be >= 1, got {n_classes}")
    p_max = max(1, _round_half_up(alpha * math.sqrt(n_classes)))
    levels = []
    s = 1
    while s <= p_max:
        levels.append(s)
        s *= 2
    if levels[-1] != p_max:
        levels.append(p_max)
    return levels


def clamp_levels(levels, h: int, w: int) -> tuple:
    """Clamp levels to min(h, w) and drop duplicates, keeping ascending order."""
    bound = min(h, w)
    seen = []
    for s in levels:
        s = min(int(s), bound)
        if s not in seen:
            seen.append(s)
    return tuple(seen)


def make_mask_head(factory: ParamFactory, width: int, n_classes: int) -> MaskHeadParams:
    return MaskHeadParams(
        phi1=factory.linear(width, width),
        phi2=factory.linear(n_classes, width),
    )


def make_ece_params(factory: ParamFactory, width: int, levels) -> ECEParams:
    levels = tuple(int(s) for s in levels)
    d_pool = sum(s * s for s in levels)
    return ECEParams(psi=factory.linear(width, d_pool), levels=levels)


def mask_head(x4: Tensor, p: MaskHeadParams) -> MaskStack:
    """Intermediate masks phi2(phi1(x4)); both convs without activation."""
    if x4.ndim != 3 or x4.shape[0] != p.phi1.in_dim:
        raise DimensionError(
            f"mask_head: input {x4.shape} vs configured width {p.phi1.in_dim}"
        )
    inner = ops.conv1x1(x4, p.phi1.weight, p.phi1.bias)
    logits = ops.conv1x1(inner, p.phi2.weight, p.phi2.bias)
    return MaskStack(logits=logits, stage=4)


def pooled_descriptor(logits: Tensor, levels) -> Tensor:
    """Concatenated per-level pooled grids, one row per class: (N, D_pool)."""
    n = logits.shape[0]
    parts = []
    for s in levels:
        pooled = ops.adaptive_avg_pool2d(logits, s, s)
        parts.append(ops.reshape(pooled, (n, s * s)))
    return ops.concat(parts, axis=1)


def ece_extract(m: MaskStack, p: ECEParams) -> ClassEmbeddings:
    """Pyramid-pool each mask slice and project with the shared psi."""
    logits = m.logits
    if logits.shape[0] == 0:
        raise ContractError("ece_extract: empty mask stack")
    _, h, w = logits.shape
    levels = clamp_levels(p.levels, h, w)
    d_pool = sum(s * s for s in levels)
    if d_pool != p.psi.in_dim:
        raise DimensionError(
            f"ece_extract: pooled width {d_pool} (levels {levels}) does not "
            f"match psi input width {p.psi.in_dim}"
        )
    descriptor = pooled_descriptor(logits, levels)
    return ClassEmbeddings(g=p.psi(descriptor), provenance=f"stage{m.stage}")


def write_pgm(path, indices: np.ndarray, maxval: int) -> None:
    """Binary portable graymap of class indices; one byte per pixel."""
    arr = np.asarray(indices)
    if arr.ndim != 2:
        raise DataError(f"PGM export needs a 2-D index map, got {arr.shape}")
    if not 0 < maxval < 256:
        raise DataError(f"PGM maxval must be in [1, 255], got {maxval}")
    if arr.min() < 0 or arr.max() > maxval:
        raise DataError("PGM export: index out of range")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(arr.astype(np.uint8).tobytes())


def mask_to_indices(logits: np.ndarray) -> np.ndarray:
    """Argmax class index per pixel from an (N, H, W) logit stack."""
    if logits.ndim != 3:
        raise DataError(f"mask stack must be (N, H, W), got {logits.shape}")
    return np.argmax(logits, axis=0)
