"""Parameter initialization.

A ParamSet is a plain dict mapping canonical names to numpy arrays; the
shape set is fully determined by the ModelConfig (see config.param_schema).
"""

import numpy as np
from scipy.special import ndtr, ndtri

from .config import ModelConfig, param_schema

ParamSet = dict[str, np.ndarray]

TRUNC_STD = 0.02
_TRUNC_AT = 2.0  # truncate at +/- 2 standard deviations


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Truncated normal via inverse-CDF sampling (deterministic, loop-free)."""
    lo = ndtr(-_TRUNC_AT)
    hi = ndtr(_TRUNC_AT)
    u = rng.uniform(lo, hi, size=shape)
    return (ndtri(u) * std).astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParamSet:
    """Fresh ParamSet: trunc-normal(std 0.02) weights/tokens, zero biases,
    unit norm weights. Deterministic for a fixed (config, seed)."""
    rng = np.random.default_rng(seed)
    params: ParamSet = {}
    for name, shape in param_schema(config).items():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "norm.weight":
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            # cls_token, pos_embed and every linear/conv weight
            params[name] = _trunc_normal(rng, shape, TRUNC_STD, dtype)
    return params


def zeros_like_params(params: ParamSet) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def cast_params(params: ParamSet, dtype) -> ParamSet:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
