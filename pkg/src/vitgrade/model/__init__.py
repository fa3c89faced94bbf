from .attention import AttentionMask, attention_mask, mask_from_patch_masses, minimal_mass_prefix, upsample_mask
from .config import BLOCK_PARAM_SUFFIXES, ModelConfig, block_of, param_schema
from .network import ForwardTrace, check_params, forward, loss_and_grads, softmax_cross_entropy
from .params import ParamSet, cast_params, init_params, zeros_like_params
from .posembed import interpolate_pos_embed

__all__ = [
    "AttentionMask", "attention_mask", "mask_from_patch_masses", "minimal_mass_prefix",
    "upsample_mask", "BLOCK_PARAM_SUFFIXES", "ModelConfig", "block_of", "param_schema",
    "ForwardTrace", "check_params", "forward", "loss_and_grads", "softmax_cross_entropy",
    "ParamSet", "cast_params", "init_params", "zeros_like_params", "interpolate_pos_embed",
]
