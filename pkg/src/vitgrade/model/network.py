"""Pre-norm ViT forward pass and manual backprop.

Layout conventions match the shared ViT state-dict format: linear weights
are [out, in] (y = x @ W.T + b), the packed qkv axis splits as
(3, heads, head_dim). All functions are pure; repeated calls on the same
inputs are bit-identical.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .. import kernels
from ..errors import LabelError, ShapeError, VitgradeError
from .config import ModelConfig, block_of, param_schema
from .params import ParamSet

LN_EPS = 1e-6


@dataclass
class ForwardTrace:
    logits: np.ndarray                           # [B, num_classes]
    cls_features: np.ndarray                     # [B, D], post final norm
    attention: Optional[list[np.ndarray]] = None  # depth x [B, H, T, T]


def check_params(config: ModelConfig, params: ParamSet) -> None:
    schema = param_schema(config)
    missing = sorted(set(schema) - set(params))
    extra = sorted(set(params) - set(schema))
    if missing or extra:
        raise VitgradeError(f"ParamSet does not match config: missing={missing}, extra={extra}")
    for name, shape in schema.items():
        if tuple(params[name].shape) != shape:
            raise ShapeError(f"{name}: expected {shape}, got {tuple(params[name].shape)}")


def _check_images(config: ModelConfig, images: np.ndarray) -> None:
    if images.ndim != 4:
        raise ShapeError(f"images must be [B, C, H, W], got ndim={images.ndim}")
    b, c, h, w = images.shape
    if c != config.in_channels or h != config.img_size or w != config.img_size:
        raise ShapeError(
            f"images [B={b}, C={c}, H={h}, W={w}] do not match config "
            f"(C={config.in_channels}, H=W={config.img_size})")


def _patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[B, C, H, W] -> [B, G*G, C*P*P] with (c, py, px) flattened row-major."""
    b, c, h, w = images.shape
    g = h // patch
    x = images.reshape(b, c, g, patch, g, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x).reshape(b, g * g, c * patch * patch)


def _linear(x2d: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x2d @ w.T + b


def _split_heads(qkv: np.ndarray, B: int, T: int, H: int, dh: int):
    """[B*T, 3D] -> q, k, v each [B, H, T, dh]."""
    qkv = qkv.reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
    return qkv[0], qkv[1], qkv[2]


def _forward(config: ModelConfig, params: ParamSet, images: np.ndarray,
             capture_attention: bool, keep_cache: bool):
    _check_images(config, images)
    B = images.shape[0]
    T = config.num_tokens
    D = config.embed_dim
    H = config.num_heads
    dh = config.head_dim
    dtype = params["cls_token"].dtype
    images = np.asarray(images, dtype=dtype)

    patches = _patchify(images, config.patch_size)            # [B, N, CPP]
    we = params["patch_embed.weight"].reshape(D, -1)
    emb = _linear(patches.reshape(B * (T - 1), -1), we, params["patch_embed.bias"])
    tok = np.empty((B, T, D), dtype=dtype)
    tok[:, 0, :] = params["cls_token"][0, 0]
    tok[:, 1:, :] = emb.reshape(B, T - 1, D)
    tok = tok + params["pos_embed"]

    attn_maps: Optional[list[np.ndarray]] = [] if capture_attention else None
    cache: dict = {"patches": patches, "blocks": []} if keep_cache else {}
    scale = 1.0 / np.sqrt(dh)

    for blk in range(config.depth):
        p = f"blocks.{blk}."
        tok_in = tok
        u1, mean1, rstd1 = kernels.layernorm(
            tok_in.reshape(B * T, D), params[p + "norm1.weight"], params[p + "norm1.bias"], LN_EPS)
        qkv = _linear(u1, params[p + "attn.qkv.weight"], params[p + "attn.qkv.bias"])
        q, k, v = _split_heads(qkv, B, T, H, dh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * dtype.type(scale)
        probs = kernels.softmax_rows(scores.reshape(B * H * T, T)).reshape(B, H, T, T)
        if capture_attention:
            attn_maps.append(probs)
        o = probs @ v                                          # [B, H, T, dh]
        o = np.ascontiguousarray(o.transpose(0, 2, 1, 3)).reshape(B * T, D)
        attn_out = _linear(o, params[p + "attn.proj.weight"], params[p + "attn.proj.bias"])
        tok_mid = tok_in + attn_out.reshape(B, T, D)

        u2, mean2, rstd2 = kernels.layernorm(
            tok_mid.reshape(B * T, D), params[p + "norm2.weight"], params[p + "norm2.bias"], LN_EPS)
        h1 = _linear(u2, params[p + "mlp.fc1.weight"], params[p + "mlp.fc1.bias"])
        g = kernels.gelu(h1)
        m = _linear(g, params[p + "mlp.fc2.weight"], params[p + "mlp.fc2.bias"])
        tok = tok_mid + m.reshape(B, T, D)

        if keep_cache:
            cache["blocks"].append({
                "tok_in": tok_in, "mean1": mean1, "rstd1": rstd1, "u1": u1,
                "q": q, "k": k, "v": v, "probs": probs, "o": o,
                "tok_mid": tok_mid, "mean2": mean2, "rstd2": rstd2, "u2": u2,
                "h1": h1, "g": g,
            })

    y, mean_f, rstd_f = kernels.layernorm(
        tok.reshape(B * T, D), params["norm.weight"], params["norm.bias"], LN_EPS)
    cls_feat = np.ascontiguousarray(y.reshape(B, T, D)[:, 0, :])
    logits = _linear(cls_feat, params["head.weight"], params["head.bias"])

    if keep_cache:
        cache.update({"tok_final": tok, "mean_f": mean_f, "rstd_f": rstd_f,
                      "cls_feat": cls_feat})
    trace = ForwardTrace(logits=logits, cls_features=cls_feat, attention=attn_maps)
    return trace, cache


def forward(config: ModelConfig, params: ParamSet, images: np.ndarray,
            capture_attention: bool = False) -> ForwardTrace:
    """Run the model on a batch; optionally capture per-layer attention."""
    trace, _ = _forward(config, params, images, capture_attention, keep_cache=False)
    return trace


def softmax_cross_entropy(logits: np.ndarray, label_idx: np.ndarray):
    """Mean cross-entropy and dloss/dlogits for integer class indices."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    n = logits.shape[0]
    loss = float(-logp[np.arange(n), label_idx].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), label_idx] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)


def _validate_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise LabelError(f"labels must be 1-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        bad = labels[(labels < 1) | (labels > num_classes)][0]
        raise LabelError(f"label {bad} outside 1..{num_classes}")
    return labels.astype(np.int64) - 1


def loss_and_grads(config: ModelConfig, params: ParamSet, images: np.ndarray,
                   labels: Sequence[int],
                   trainable: Optional[Callable[[str], bool]] = None):
    """Mean softmax cross-entropy and its gradients for trainable names.

    `trainable` is a name predicate; None trains everything. The returned
    grad dict has entries exactly for the trainable names.
    """
    label_idx = _validate_labels(labels, config.num_classes)
    if label_idx.shape[0] != images.shape[0]:
        raise LabelError(
            f"{label_idx.shape[0]} labels for a batch of {images.shape[0]} images")
    if trainable is None:
        trainable = lambda name: True
    wanted = {name for name in param_schema(config) if trainable(name)}
    if not wanted:
        raise VitgradeError("no trainable parameters")

    trace, cache = _forward(config, params, images, capture_attention=False, keep_cache=True)
    loss, dlogits = softmax_cross_entropy(trace.logits, label_idx)

    B = images.shape[0]
    T = config.num_tokens
    D = config.embed_dim
    H = config.num_heads
    dh = config.head_dim
    dtype = params["cls_token"].dtype
    scale = dtype.type(1.0 / np.sqrt(dh))
    grads: ParamSet = {}

    # Everything below the lowest trainable block is skipped unless the
    # embedding-level parameters themselves need gradients.
    embed_names = {"cls_token", "pos_embed", "patch_embed.weight", "patch_embed.bias"}
    need_embed = bool(wanted & embed_names)
    trainable_blocks = {block_of(n) for n in wanted if block_of(n) is not None}
    lowest_block = 0 if need_embed else min(trainable_blocks, default=config.depth)

    # head
    cls_feat = cache["cls_feat"]
    grads["head.weight"] = dlogits.T @ cls_feat
    grads["head.bias"] = dlogits.sum(axis=0)
    dcls = dlogits @ params["head.weight"]                     # [B, D]

    # final norm: only the CLS rows carry gradient
    dy = np.zeros((B, T, D), dtype=dtype)
    dy[:, 0, :] = dcls
    dx, dw, db = kernels.layernorm_grad(
        cache["tok_final"].reshape(B * T, D), params["norm.weight"],
        cache["mean_f"], cache["rstd_f"], dy.reshape(B * T, D))
    grads["norm.weight"] = dw
    grads["norm.bias"] = db
    dtok = dx.reshape(B, T, D)

    for blk in range(config.depth - 1, lowest_block - 1, -1):
        p = f"blocks.{blk}."
        c = cache["blocks"][blk]

        # MLP branch
        dm = dtok.reshape(B * T, D)
        grads[p + "mlp.fc2.weight"] = dm.T @ c["g"]
        grads[p + "mlp.fc2.bias"] = dm.sum(axis=0)
        dg = dm @ params[p + "mlp.fc2.weight"]
        dh1 = kernels.gelu_grad(c["h1"], dg)
        grads[p + "mlp.fc1.weight"] = dh1.T @ c["u2"]
        grads[p + "mlp.fc1.bias"] = dh1.sum(axis=0)
        du2 = dh1 @ params[p + "mlp.fc1.weight"]
        dx, dw, db = kernels.layernorm_grad(
            c["tok_mid"].reshape(B * T, D), params[p + "norm2.weight"],
            c["mean2"], c["rstd2"], du2)
        grads[p + "norm2.weight"] = dw
        grads[p + "norm2.bias"] = db
        dtok_mid = dtok + dx.reshape(B, T, D)

        # attention branch
        da = dtok_mid.reshape(B * T, D)
        grads[p + "attn.proj.weight"] = da.T @ c["o"]
        grads[p + "attn.proj.bias"] = da.sum(axis=0)
        do = (da @ params[p + "attn.proj.weight"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        dprobs = do @ c["v"].transpose(0, 1, 3, 2)             # [B, H, T, T]
        dv = c["probs"].transpose(0, 1, 3, 2) @ do             # [B, H, T, dh]
        dscores = kernels.softmax_rows_grad(
            c["probs"].reshape(B * H * T, T), dprobs.reshape(B * H * T, T)).reshape(B, H, T, T)
        dq = (dscores @ c["k"]) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ c["q"]) * scale
        dqkv = np.stack([dq, dk, dv], axis=0)                  # [3, B, H, T, dh]
        dqkv = np.ascontiguousarray(dqkv.transpose(1, 3, 0, 2, 4)).reshape(B * T, 3 * D)
        grads[p + "attn.qkv.weight"] = dqkv.T @ c["u1"]
        grads[p + "attn.qkv.bias"] = dqkv.sum(axis=0)
        du1 = dqkv @ params[p + "attn.qkv.weight"]
        dx, dw, db = kernels.layernorm_grad(
            c["tok_in"].reshape(B * T, D), params[p + "norm1.weight"],
            c["mean1"], c["rstd1"], du1)
        grads[p + "norm1.weight"] = dw
        grads[p + "norm1.bias"] = db
        dtok = dtok_mid + dx.reshape(B, T, D)

    if need_embed:
        grads["pos_embed"] = dtok.sum(axis=0, keepdims=True)
        grads["cls_token"] = dtok[:, 0:1, :].sum(axis=0, keepdims=True)
        demb = dtok[:, 1:, :].reshape(B * (T - 1), D)
        patches = cache["patches"].reshape(B * (T - 1), -1)
        grads["patch_embed.weight"] = (demb.T @ patches).reshape(
            params["patch_embed.weight"].shape)
        grads["patch_embed.bias"] = demb.sum(axis=0)

    return loss, {name: g for name, g in grads.items() if name in wanted}
