"""ECENet-style segmentation decoder with explicit class embeddings, built on
a tape-based numpy autodiff core with numba-accelerated kernels."""

from .tensor import GradientTape, Tensor, backward, parameters_of
from .gradcheck import grad_check, grad_check_params
from . import ops
from .blocks import (
    AttentionParams,
    GhostParams,
    LinearLayer,
    MLPBlock,
    NormAffine,
    ParamFactory,
    SEBlock,
    ghost_expand,
    mlp_forward,
    scaled_attention,
    se_forward,
)
from .reconstruction import FROutput, FRParams, diversity_loss, fr_forward
from .extraction import (
    ClassEmbeddings,
    ECEParams,
    MaskHeadParams,
    MaskStack,
    ece_extract,
    mask_head,
    pyramid_levels,
)
from .sau import SAUParams, SAUStepOutput, class_update, sau_step, \
    semantics_attention, similarity_to_mask
from .model import (
    ECENet,
    EncoderConfig,
    ModelConfig,
    ModelOutput,
    StageFeatures,
    overall_loss,
    toy_encoder,
    unify_channels,
)
from .losses import LossWeights, cross_entropy_loss, dice_loss, focal_loss
from .data import SegSample, gen_shapes
from .evaluate import ConfusionMatrix, evaluate
from .train import AdamW, TrainResult, train
from .config import TrainConfig, load_config, parse_config

__version__ = "0.1.0"
