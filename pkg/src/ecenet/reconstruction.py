"""Feature reconstruction: intrinsic + diverse branch rebuild of backbone
features, and the diversity loss on the diverse branch.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .blocks import LinearLayer, NormAffine, ParamFactory, SEBlock, se_forward
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass
class FRParams:
    intrinsic: LinearLayer  # 1x1 conv C -> C/2
    norm: NormAffine        # per-channel norm affine on C/2
    cheap: Tensor           # depthwise 3x3 kernels on C/2 channels
    se: SEBlock
    fuse: LinearLayer       # 1x1 conv C -> C


@dataclass
class FROutput:
    y: Tensor          # reconstructed features, same shape as the input
    y_diverse: Tensor  # diverse branch (C/2, H, W), kept for the loss


def make_fr_params(factory: ParamFactory, channels: int,
                   se_ratio: int = 4) -> FRParams:
    if channels % 2 != 0:
        raise ConfigError(f"feature reconstruction needs even channels, got {channels}")
    half = channels // 2
    return FRParams(
        intrinsic=factory.linear(half, channels),
        norm=factory.norm_affine(half),
        cheap=factory.dw_kernel(half),
        se=factory.se_block(half, se_ratio),
        fuse=factory.linear(channels, channels),
    )


def fr_forward(f: Tensor, p: FRParams) -> FROutput:
    """Intrinsic branch, cheap+SE diverse branch, concat, fuse back to C."""
    if f.ndim != 3 or f.shape[0] != p.intrinsic.in_dim:
        raise DimensionError(
            f"fr_forward: input {f.shape} vs configured channels {p.intrinsic.in_dim}"
        )
    y_prime = ops.channel_norm(
        ops.conv1x1(f, p.intrinsic.weight, p.intrinsic.bias), p.norm.gamma, p.norm.beta
    )
    y_diverse = se_forward(ops.dwconv3x3(y_prime, p.cheap), p.se)
    y = ops.conv1x1(ops.concat([y_prime, y_diverse], axis=0),
                    p.fuse.weight, p.fuse.bias)
    return FROutput(y=y, y_diverse=y_diverse)


def diversity_loss(y_diverse: Tensor) -> Tensor:
    """1 - (1/C) * sum over positions of the channel-max spatial softmax.

    Each channel is softmaxed over its spatial positions; at every position
    the maximum over channels is taken and summed. Low values mean channels
    peak on distinct pixels.
    """
    if y_diverse.ndim != 3:
        raise DimensionError(f"diversity_loss: need C,H,W, got {y_diverse.shape}")
    c = y_diverse.shape[0]
    flat = ops.reshape(y_diverse, (c, y_diverse.shape[1] * y_diverse.shape[2]))
    per_channel = ops.softmax(flat, axis=1)
    peak_sum = ops.sum(ops.max(per_channel, axis=0))
    return ops.sub(1.0, ops.scale(peak_sum, 1.0 / c))
