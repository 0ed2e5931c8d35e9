"""Semantics attention & updater: cross-attention of stage features against
class embeddings, reuse of the similarity map as a mask, and the gated
refresh of the embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .blocks import (
    AttentionParams,
    LinearLayer,
    MLPBlock,
    NormAffine,
    ParamFactory,
    mlp_forward,
    scaled_attention,
)
from .errors import DimensionError
from .extraction import ClassEmbeddings, ECEParams, MaskStack, ece_extract
from .tensor import Tensor


@dataclass
class SAUParams:
    attention: AttentionParams
    mlp: MLPBlock
    norm_feat: NormAffine   # pre-attention norm on features
    norm_embed: NormAffine  # pre-attention norm on class embeddings
    norm_mlp: NormAffine    # pre-MLP norm
    phi3: LinearLayer       # fuses the fresh embeddings
    phi4: LinearLayer       # fuses the previous embeddings
    psi1: LinearLayer       # gate projection, followed by psi1_norm
    psi1_norm: NormAffine
    psi2: LinearLayer       # update projection, followed by psi2_norm
    psi2_norm: NormAffine
    ece: ECEParams          # shared with the rest of the model
    stage: int = 0          # resolution tag of the produced mask


@dataclass
class SAUStepOutput:
    enhanced: Tensor
    new_mask: MaskStack
    updated_g: ClassEmbeddings


def make_sau_params(factory: ParamFactory, width: int, heads: int,
                    ece: ECEParams, stage: int) -> SAUParams:
    """psi2 starts at zero so the step is initially the identity on embeddings."""
    return SAUParams(
        attention=factory.attention(width, heads),
        mlp=factory.mlp(width),
        norm_feat=factory.norm_affine(width),
        norm_embed=factory.norm_affine(width),
        norm_mlp=factory.norm_affine(width),
        phi3=factory.linear(width, width),
        phi4=factory.linear(width, width),
        psi1=factory.linear(width, width),
        psi1_norm=factory.norm_affine(width),
        psi2=factory.linear(width, width, zero=True),
        psi2_norm=factory.norm_affine(width),
        ece=ece,
        stage=stage,
    )


def semantics_attention(x: Tensor, g: ClassEmbeddings, p: SAUParams,
                        h: int, w: int) -> tuple[Tensor, Tensor]:
    """Pre-norm attention + MLP with residuals; also returns the similarity."""
    if x.shape[0] != h * w:
        raise DimensionError(f"semantics_attention: L={x.shape[0]} != {h}*{w}")
    xn = ops.layernorm(x, p.norm_feat.gamma, p.norm_feat.beta)
    gn = ops.layernorm(g.g, p.norm_embed.gamma, p.norm_embed.beta)
    attn_out, sim = scaled_attention(xn, gn, p.attention)
    x1 = ops.add(x, attn_out)
    x1n = ops.layernorm(x1, p.norm_mlp.gamma, p.norm_mlp.beta)
    enhanced = ops.add(x1, mlp_forward(x1n, p.mlp, h, w))
    return enhanced, sim


def similarity_to_mask(sim: Tensor, h: int, w: int, stage: int = 0) -> MaskStack:
    """Reshape an (L, N) similarity map into per-class (N, h, w) logits."""
    if sim.shape[0] != h * w:
        raise DimensionError(f"similarity_to_mask: L={sim.shape[0]} != {h}*{w}")
    n = sim.shape[1]
    return MaskStack(logits=ops.reshape(ops.transpose(sim), (n, h, w)), stage=stage)


def class_update(g: ClassEmbeddings, g_hat: ClassEmbeddings,
                 p: SAUParams) -> ClassEmbeddings:
    """Sigmoid-gated refresh: out = U * psi2(g_hat) + g."""
    if g.g.shape != g_hat.g.shape:
        raise DimensionError(
            f"class_update: shapes {g.g.shape} vs {g_hat.g.shape} differ"
        )
    fused = ops.mul(p.phi3(g_hat.g), p.phi4(g.g))
    gate = ops.sigmoid(
        ops.layernorm(p.psi1(fused), p.psi1_norm.gamma, p.psi1_norm.beta)
    )
    update = ops.layernorm(p.psi2(g_hat.g), p.psi2_norm.gamma, p.psi2_norm.beta)
    out = ops.add(ops.mul(gate, update), g.g)
    return ClassEmbeddings(g=out, provenance=g_hat.provenance)


def naive_plus_update(g: ClassEmbeddings, g_hat: ClassEmbeddings) -> ClassEmbeddings:
    """Ablation variant: plain addition, no gate."""
    return ClassEmbeddings(g=ops.add(g.g, g_hat.g), provenance=g_hat.provenance)


def sau_step(x_prev: Tensor, g: ClassEmbeddings, p: SAUParams, h: int, w: int,
             updater: str = "gated") -> SAUStepOutput:
    """One decoder step on an earlier stage's features."""
    enhanced, sim = semantics_attention(x_prev, g, p, h, w)
    new_mask = similarity_to_mask(sim, h, w, stage=p.stage)
    g_hat = ece_extract(new_mask, p.ece)
    if updater == "plus":
        updated = naive_plus_update(g, g_hat)
    else:
        updated = class_update(g, g_hat, p)
    return SAUStepOutput(enhanced=enhanced, new_mask=new_mask, updated_g=updated)
