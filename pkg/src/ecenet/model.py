"""Full model assembly: toy 4-stage encoder, channel unification, feature
reconstruction per stage, the class-extraction / attention-updater cascade,
ghost + pixel-shuffle aggregation, the class-probability path, and the
overall loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import GhostParams, LinearLayer, NormAffine, ParamFactory, ghost_expand
from .errors import ConfigError, DimensionError
from .extraction import (
    ClassEmbeddings,
    ECEParams,
    MaskHeadParams,
    clamp_levels,
    ece_extract,
    make_ece_params,
    make_mask_head,
    mask_head,
    pyramid_levels,
)
from .losses import (
    LossWeights,
    cross_entropy_loss,
    dice_loss,
    downsample_nearest,
    focal_loss,
    one_hot,
)
from .reconstruction import FRParams, diversity_loss, fr_forward, make_fr_params
from .sau import SAUParams, make_sau_params, sau_step
from .tensor import Tensor, parameters_of


@dataclass
class EncoderConfig:
    patch_size: int = 4
    widths: tuple = (32, 64, 128, 256)
    blocks: tuple = (1, 1, 1, 1)


@dataclass
class ModelConfig:
    n_classes: int = 4
    width: int = 64
    alpha: float = 1.0
    image_size: int = 64
    heads: int = 8
    se_ratio: int = 4
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_fr: bool = True
    updater: str = "gated"


@dataclass
class StageFeatures:
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor

    def as_list(self) -> list[Tensor]:
        return [self.f1, self.f2, self.f3, self.f4]


@dataclass
class ConvBlockParams:
    dw: Tensor
    pw: LinearLayer
    norm: NormAffine


@dataclass
class EncoderStageParams:
    down: LinearLayer
    down_norm: NormAffine
    blocks: list


@dataclass
class EncoderParams:
    stages: list


@dataclass
class ECENetParams:
    encoder: EncoderParams
    fr: list | None
    unify: list
    mask_head: MaskHeadParams
    ece: ECEParams
    sau: list
    ghosts: list  # ghost params for pixel-shuffle factors 2, 4, 8
    final_proj: LinearLayer
    cls_linear: LinearLayer


@dataclass
class ModelOutput:
    seg_logits: Tensor       # (N, H, W)
    summed_mask: Tensor      # (N, H/4, W/4)
    class_probs: Tensor      # (N, N)
    div_losses: list         # one scalar per stage (empty with FR disabled)
    g: ClassEmbeddings


def make_encoder_params(factory: ParamFactory, cfg: EncoderConfig) -> EncoderParams:
    if cfg.patch_size != 4:
        raise ConfigError(f"toy encoder uses a stride-4 stem, got patch {cfg.patch_size}")
    if len(cfg.widths) != 4 or len(cfg.blocks) != 4:
        raise ConfigError("encoder needs 4 stage widths and 4 block counts")
    if any(c % 2 for c in cfg.widths):
        raise ConfigError(f"stage widths must be even, got {cfg.widths}")
    stages = []
    in_ch = 3
    for i, (width, n_blocks) in enumerate(zip(cfg.widths, cfg.blocks)):
        stride = 4 if i == 0 else 2
        stages.append(EncoderStageParams(
            down=factory.linear(width, in_ch * stride * stride),
            down_norm=factory.norm_affine(width),
            blocks=[ConvBlockParams(
                dw=factory.dw_kernel(width),
                pw=factory.linear(width, width),
                norm=factory.norm_affine(width),
            ) for _ in range(n_blocks)],
        ))
        in_ch = width
    return EncoderParams(stages=stages)


def toy_encoder(image: Tensor, p: EncoderParams) -> StageFeatures:
    """Stride-4 stem then three stride-2 stages of (conv + norm + gelu) blocks."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"toy_encoder: image must be (3, H, W), got {image.shape}")
    h, w = image.shape[1], image.shape[2]
    if h % 32 or w % 32:
        raise DimensionError(f"toy_encoder: sides must divide by 32, got {h}x{w}")
    x = image
    feats = []
    for i, stage in enumerate(p.stages):
        stride = 4 if i == 0 else 2
        x = ops.pixel_unshuffle(x, stride)
        x = ops.conv1x1(x, stage.down.weight, stage.down.bias)
        x = ops.gelu(ops.channel_norm(x, stage.down_norm.gamma, stage.down_norm.beta))
        for blk in stage.blocks:
            x = ops.conv1x1(ops.dwconv3x3(x, blk.dw), blk.pw.weight, blk.pw.bias)
            x = ops.gelu(ops.channel_norm(x, blk.norm.gamma, blk.norm.beta))
        feats.append(x)
    return StageFeatures(*feats)


def unify_channels(features: list, unify: list) -> list:
    """Per-stage 1x1 conv of stage features to the common width."""
    return [ops.conv1x1(f, u.weight, u.bias) for f, u in zip(features, unify)]


class ECENet:
    """The assembled model; owns parameters and static configuration."""

    def __init__(self, cfg: ModelConfig, seed=0, dtype=np.float32):
        if cfg.image_size % 32:
            raise ConfigError(f"image size must divide by 32, got {cfg.image_size}")
        if cfg.width % cfg.heads:
            raise ConfigError(
                f"unified width {cfg.width} not divisible by {cfg.heads} heads"
            )
        if cfg.updater not in ("gated", "plus"):
            raise ConfigError(f"unknown updater {cfg.updater!r}")
        if cfg.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {cfg.n_classes}")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        factory = ParamFactory(seed, dtype)

        # A single psi is shared by every extraction site, so the pyramid is
        # clamped once, to the smallest mask resolution it will ever see
        # (stage 4 of the configured image size).
        min_res = cfg.image_size // 32
        levels = clamp_levels(pyramid_levels(cfg.alpha, cfg.n_classes),
                              min_res, min_res)
        ece = make_ece_params(factory, cfg.width, levels)

        self.params = ECENetParams(
            encoder=make_encoder_params(factory, cfg.encoder),
            fr=[make_fr_params(factory, c, cfg.se_ratio)
                for c in cfg.encoder.widths] if cfg.use_fr else None,
            unify=[factory.linear(cfg.width, c) for c in cfg.encoder.widths],
            mask_head=make_mask_head(factory, cfg.width, cfg.n_classes),
            ece=ece,
            sau=[make_sau_params(factory, cfg.width, cfg.heads, ece, stage=s)
                 for s in (3, 2, 1)],
            ghosts=[factory.ghost(cfg.width, r * r) for r in (2, 4, 8)],
            final_proj=factory.linear(cfg.n_classes, 4 * cfg.width),
            cls_linear=factory.linear(cfg.n_classes, cfg.width),
        )

    def named_parameters(self) -> list:
        return list(parameters_of(self.params))

    def forward(self, image: Tensor) -> ModelOutput:
        cfg = self.cfg
        p = self.params
        h_img, w_img = image.shape[1], image.shape[2]

        stage_feats = toy_encoder(image, p.encoder).as_list()

        div_losses = []
        if cfg.use_fr:
            rebuilt = []
            for f, fr in zip(stage_feats, p.fr):
                out = fr_forward(f, fr)
                rebuilt.append(out.y)
                div_losses.append(diversity_loss(out.y_diverse))
        else:
            rebuilt = stage_feats

        xs = unify_channels(rebuilt, p.unify)

        mask4 = mask_head(xs[3], p.mask_head)
        g = ece_extract(mask4, p.ece)

        masks = [mask4]
        enhanced = {}
        for sau_params, idx in zip(p.sau, (2, 1, 0)):
            x = xs[idx]
            _, h, w = x.shape
            step = sau_step(ops.spatial_to_tokens(x), g, sau_params, h, w,
                            updater=cfg.updater)
            g = step.updated_g
            masks.append(step.new_mask)
            enhanced[idx] = ops.tokens_to_spatial(step.enhanced, h, w)

        # aggregate everything at 1/4 resolution
        h4, w4 = h_img // 4, w_img // 4
        up = [enhanced[0]]
        for source, ghost, r in ((enhanced[1], p.ghosts[0], 2),
                                 (enhanced[2], p.ghosts[1], 4),
                                 (xs[3], p.ghosts[2], 8)):
            up.append(ops.pixel_shuffle(ghost_expand(source, ghost), r))
        base = ops.conv1x1(ops.concat(up, axis=0),
                           p.final_proj.weight, p.final_proj.bias)

        summed = None
        for m in masks:
            resized = ops.bilinear_resize(m.logits, h4, w4)
            summed = resized if summed is None else ops.add(summed, resized)

        class_probs = ops.softmax(p.cls_linear(g.g), axis=1)
        n = cfg.n_classes
        mixture = ops.matmul(ops.transpose(class_probs),
                             ops.reshape(summed, (n, h4 * w4)))
        enhancement = ops.reshape(mixture, (n, h4, w4))

        seg_logits = ops.bilinear_resize(ops.add(base, enhancement), h_img, w_img)
        return ModelOutput(
            seg_logits=seg_logits,
            summed_mask=summed,
            class_probs=class_probs,
            div_losses=div_losses,
            g=g,
        )


def overall_loss(out: ModelOutput, gt: np.ndarray,
                 weights: LossWeights | None = None) -> Tensor:
    """CE + lambda_focal*focal + lambda_dice*dice on the summed mask
    + lambda_div * mean of the per-stage diversity losses."""
    return loss_components(out, gt, weights)["total"]


def loss_components(out: ModelOutput, gt: np.ndarray,
                    weights: LossWeights | None = None) -> dict:
    """Scalar Tensors for logging: ce, mask (focal+dice weighted), div mean."""
    w = weights or LossWeights()
    ce = cross_entropy_loss(out.seg_logits, gt)
    n, h4, w4 = out.summed_mask.shape
    gt_small = downsample_nearest(gt, h4, w4)
    planes, valid = one_hot(gt_small, n, dtype=out.summed_mask.dtype)
    mask = ops.add(
        ops.scale(focal_loss(out.summed_mask, planes, w.focal_gamma,
                             w.focal_alpha, valid), w.lambda_focal),
        ops.scale(dice_loss(out.summed_mask, planes, valid=valid), w.lambda_dice),
    )
    if out.div_losses:
        div = out.div_losses[0]
        for extra in out.div_losses[1:]:
            div = ops.add(div, extra)
        div = ops.scale(div, 1.0 / len(out.div_losses))
    else:
        div = Tensor(np.zeros((), dtype=out.summed_mask.dtype))
    total = ops.add(ops.add(ce, mask), ops.scale(div, w.lambda_div))
    return {"total": total, "ce": ce, "mask": mask, "div": div}


def micro_model(seed: int = 0, dtype=np.float64) -> "ECENet":
    """Small-width 64x64 4-class instance used by verification harnesses."""
    cfg = ModelConfig(
        n_classes=4,
        width=8,
        alpha=1.0,
        image_size=64,
        heads=2,
        se_ratio=2,
        encoder=EncoderConfig(widths=(4, 6, 8, 12), blocks=(1, 1, 1, 1)),
    )
    return ECENet(cfg, seed=seed, dtype=dtype)


def end_to_end_gradcheck(eps: float = 1e-6, seed: int = 0,
                         image_coords: int = 32,
                         coords_per_param: int = 2) -> dict:
    """Finite-difference check of the overall loss through the whole model.

    Runs at 64 bits on a 1-image micro instance; the image gradient is checked
    on a sampled coordinate subset and every parameter on a couple of sampled
    coordinates. Returns {"input": err, "parameters": err}.

    The step is 1e-6 rather than the op-level default: the zero-initialized
    update projection feeds its norm layer an exactly-zero vector, where the
    curvature is of order eps_norm**-1.5 and a 1e-5 step leaves visible
    truncation error (it shrinks quadratically with the step, confirming the
    analytic gradient).
    """
    from .gradcheck import grad_check, grad_check_params

    rng = np.random.default_rng(seed)
    model = micro_model(seed=seed, dtype=np.float64)
    image = rng.uniform(0.0, 1.0, size=(3, 64, 64))
    gt = rng.integers(0, 4, size=(64, 64)).astype(np.int32)
    weights = LossWeights()

    def loss_of_image(x: Tensor) -> Tensor:
        return overall_loss(model.forward(x), gt, weights)

    input_err = grad_check(loss_of_image, Tensor(image), eps=eps,
                           max_coords=image_coords, seed=seed)

    fixed = Tensor(image)
    param_err = grad_check_params(
        lambda: overall_loss(model.forward(fixed), gt, weights),
        model.named_parameters(), eps=eps,
        coords_per_param=coords_per_param, seed=seed)
    return {"input": input_err, "parameters": param_err}
