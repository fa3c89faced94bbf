"""Training/evaluation orchestration: the linear-probe and fine-tune
recipes, checkpoint-driven evaluation, attention-mask rendering and CLS
feature export.

Datasets are held in memory (the engine targets desk-scale corpora);
batches are normalized on the fly. All loops are deterministic: batch
order is drawn from (seed, epoch) and every resumable artifact is written
through the canonical PTF/JSON encoders.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ckpt as ckpt_io
from .data import (
    NORMALIZATION_PRESETS,
    DatasetManifest,
    NormalizationSpec,
    load_image,
    load_manifest,
    save_pgm,
    stratified_split,
)
from .errors import ConfigError, NameValidationError, NonFiniteError, VitgradeError
from .metrics import ConfusionMatrix, MetricsReport, compute_report
from .model import (
    ModelConfig,
    ParamSet,
    attention_mask,
    forward,
    init_params,
    interpolate_pos_embed,
    loss_and_grads,
    param_schema,
    softmax_cross_entropy,
    upsample_mask,
)
from .optim import (
    AdamW,
    EarlyStopState,
    FreezePolicy,
    ScheduleConfig,
    SgdMomentum,
    apply_freeze,
    layer_scale,
    lr_at,
    param_group,
)

HEAD_NAMES = ("head.weight", "head.bias")


@dataclass
class RunConfig:
    mode: str = "finetune"                   # probe | finetune
    model: ModelConfig = field(default_factory=ModelConfig)
    manifest: Optional[Path] = None
    val_manifest: Optional[Path] = None      # explicit val set; else split
    split_ratio: float = 0.7
    seed: int = 0
    normalization: str = "unit"
    batch_size: int = 32
    epochs: Optional[int] = None             # default: 100 probe / 200 finetune
    dtype: str = "float32"                   # float64 = test mode
    augment: bool = False
    init_ckpt: Optional[Path] = None
    out_dir: Path = Path("runs/out")
    # probe recipe
    probe_lr: float = 0.01
    probe_momentum: float = 0.9
    probe_min_lr: float = 0.0
    # fine-tune recipe
    peak_lr: float = 1e-4
    min_lr: float = 0.0
    warmup_epochs: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.05
    layerwise_decay: float = 0.75
    freeze_epochs: int = 30
    patience: int = 20
    # attention rendering
    mass: float = 0.6
    image: Optional[Path] = None

    def __post_init__(self):
        if self.mode not in ("probe", "finetune"):
            raise ConfigError(f"mode must be 'probe' or 'finetune', got {self.mode!r}")
        if self.normalization not in NORMALIZATION_PRESETS:
            raise ConfigError(
                f"unknown normalization {self.normalization!r}; "
                f"presets: {sorted(NORMALIZATION_PRESETS)}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs is None:
            self.epochs = 100 if self.mode == "probe" else 200
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def norm_spec(self) -> NormalizationSpec:
        spec = NORMALIZATION_PRESETS[self.normalization]
        if len(spec.mean) != self.model.in_channels and not (
                spec.replicate_channels and len(spec.mean) == self.model.in_channels):
            raise ConfigError(
                f"normalization {self.normalization!r} has {len(spec.mean)} channels "
                f"but the model expects {self.model.in_channels}")
        return spec

    def recipe_fingerprint(self) -> dict:
        if self.mode == "probe":
            return {"mode": "probe", "lr": self.probe_lr, "momentum": self.probe_momentum,
                    "min_lr": self.probe_min_lr, "epochs": self.epochs,
                    "batch_size": self.batch_size, "seed": self.seed}
        return {"mode": "finetune", "peak_lr": self.peak_lr, "min_lr": self.min_lr,
                "warmup_epochs": self.warmup_epochs,
                "betas": [self.adam_beta1, self.adam_beta2], "eps": self.adam_eps,
                "weight_decay": self.weight_decay, "layerwise_decay": self.layerwise_decay,
                "freeze_epochs": self.freeze_epochs, "patience": self.patience,
                "epochs": self.epochs, "batch_size": self.batch_size, "seed": self.seed}


@dataclass
class LoadedDataset:
    images: np.ndarray          # [N, H, W] float32 in [0, 1]
    levels: np.ndarray          # [N] int64, 1..4
    paths: list[Path]

    def __len__(self) -> int:
        return len(self.paths)


def load_dataset(manifest: DatasetManifest) -> LoadedDataset:
    if len(manifest) == 0:
        raise VitgradeError("manifest has no entries")
    images = []
    levels = []
    paths = []
    for entry in manifest:
        img = load_image(entry.path)
        if images and img.shape != images[0].shape:
            raise VitgradeError(
                f"{entry.path}: image shape {img.shape} differs from {images[0].shape}")
        images.append(img)
        levels.append(entry.level)
        paths.append(entry.path)
    return LoadedDataset(images=np.stack(images), levels=np.asarray(levels, dtype=np.int64),
                         paths=paths)


def _normalize_batch(images: np.ndarray, spec: NormalizationSpec, dtype) -> np.ndarray:
    """[B, H, W] raw grayscale -> [B, C, H, W] standardized."""
    channels = len(spec.mean)
    if channels == 1:
        stack = images[:, None, :, :]
    elif spec.replicate_channels:
        stack = np.repeat(images[:, None, :, :], channels, axis=1)
    else:
        raise ConfigError("multi-channel normalization without replication")
    mean = np.asarray(spec.mean, dtype=dtype).reshape(1, -1, 1, 1)
    std = np.asarray(spec.std, dtype=dtype).reshape(1, -1, 1, 1)
    return (stack.astype(dtype) - mean) / std


def _augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random per-sample flips and 90-degree rotations."""
    out = np.empty_like(images)
    rots = rng.integers(0, 4, size=len(images))
    flips = rng.integers(0, 2, size=len(images))
    for i, (img, k, fl) in enumerate(zip(images, rots, flips)):
        if k:
            img = np.rot90(img, k)
        if fl:
            img = np.fliplr(img)
        out[i] = img
    return out


def forward_dataset(config: ModelConfig, params: ParamSet, ds: LoadedDataset,
                    spec: NormalizationSpec, batch_size: int):
    """Logits and CLS features for every sample, in dataset order."""
    dtype = params["cls_token"].dtype
    logits = []
    feats = []
    for lo in range(0, len(ds), batch_size):
        batch = _normalize_batch(ds.images[lo:lo + batch_size], spec, dtype)
        trace = forward(config, params, batch)
        logits.append(trace.logits)
        feats.append(trace.cls_features)
    return np.concatenate(logits), np.concatenate(feats)


def evaluate_params(config: ModelConfig, params: ParamSet, ds: LoadedDataset,
                    spec: NormalizationSpec, batch_size: int) -> MetricsReport:
    logits, _ = forward_dataset(config, params, ds, spec, batch_size)
    preds = logits.argmax(axis=1) + 1
    cm = ConfusionMatrix(config.num_classes)
    cm.accumulate(preds, ds.levels)
    return compute_report(cm)


def _load_train_val(cfg: RunConfig):
    if cfg.manifest is None:
        raise ConfigError("no training manifest configured")
    manifest = load_manifest(cfg.manifest)
    if cfg.val_manifest is not None:
        train_m, val_m = manifest, load_manifest(cfg.val_manifest)
    else:
        train_m, val_m = stratified_split(manifest, cfg.split_ratio, cfg.seed)
    return load_dataset(train_m), load_dataset(val_m)


def prepare_params(cfg: RunConfig) -> ParamSet:
    """Initial ParamSet: fresh init overlaid with an optional checkpoint.

    Missing checkpoint tensors (typically the head of a converted backbone)
    keep their fresh initialization; a pos_embed trained on another grid is
    resampled to the configured resolution.
    """
    config = cfg.model
    params = init_params(config, cfg.seed, cfg.np_dtype)
    if cfg.init_ckpt is None:
        return params
    loaded, _meta = ckpt_io.load(cfg.init_ckpt)
    schema = param_schema(config)
    unexpected = sorted(set(loaded) - set(schema))
    if unexpected:
        raise NameValidationError(
            f"{cfg.init_ckpt}: unexpected tensors {unexpected}")
    if "pos_embed" in loaded and loaded["pos_embed"].shape != schema["pos_embed"]:
        loaded["pos_embed"] = interpolate_pos_embed(
            loaded["pos_embed"], config.grid_size)
    for name, arr in loaded.items():
        if tuple(arr.shape) != schema[name]:
            raise NameValidationError(
                f"{cfg.init_ckpt}: {name} has shape {tuple(arr.shape)}, "
                f"expected {schema[name]}")
        params[name] = arr.astype(cfg.np_dtype)
    return params


@dataclass
class RunResult:
    params: ParamSet
    report: MetricsReport
    checkpoint_path: Path
    log_path: Path
    best_epoch: int


def _write_report(report: MetricsReport, path: Path) -> None:
    path.write_text(report.to_json() + "\n")


def _lr_groups(step: int, schedule: ScheduleConfig, depth: int, decay: float) -> dict:
    base = lr_at(schedule, step)
    return {str(g): base * layer_scale(g, depth, decay) for g in range(depth + 2)}


def _save_checkpoint(params: ParamSet, cfg: RunConfig, path: Path, best_epoch: int,
                     best_val: Optional[float]) -> None:
    meta = {
        "model": cfg.model.to_meta(),
        "normalization": cfg.normalization,
        "recipe": cfg.recipe_fingerprint(),
        "best_epoch": best_epoch,
        "best_val_wacc": best_val,
        "source_grid": cfg.model.grid_size,
    }
    ckpt_io.save(params, meta, path)


def run_probe(cfg: RunConfig,
              on_epoch_end: Optional[Callable[[int, ParamSet, float], None]] = None
              ) -> RunResult:
    """Train only the classification head on frozen-backbone CLS features.

    The backbone is exercised once to cache features; its parameters are
    never rebound, so it is bit-identical before and after the run.
    """
    if cfg.mode != "probe":
        raise ConfigError(f"run_probe called with mode {cfg.mode!r}")
    config = cfg.model
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds = _load_train_val(cfg)
    params = prepare_params(cfg)
    spec = cfg.norm_spec

    _, train_feats = forward_dataset(config, params, train_ds, spec, cfg.batch_size)
    _, val_feats = forward_dataset(config, params, val_ds, spec, cfg.batch_size)
    train_idx = train_ds.levels - 1

    def head_report(w, b) -> MetricsReport:
        logits = val_feats @ w.T + b
        preds = logits.argmax(axis=1) + 1
        cm = ConfusionMatrix(config.num_classes).accumulate(preds, val_ds.levels)
        return compute_report(cm)

    n = len(train_ds)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sgd = SgdMomentum(cfg.probe_momentum)
    sgd.sync_state(HEAD_NAMES)
    schedule = None
    if cfg.epochs > 0:
        schedule = ScheduleConfig(peak_lr=cfg.probe_lr, min_lr=cfg.probe_min_lr,
                                  warmup_steps=0, total_steps=cfg.epochs * steps_per_epoch)

    log_path = out / "train_log.jsonl"
    step = 0
    with open(log_path, "w") as log:
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            lrs = {str(config.depth + 1): lr_at(schedule, step)}
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                feats = train_feats[idx]
                loss, dlogits = softmax_cross_entropy(
                    feats @ params["head.weight"].T + params["head.bias"], train_idx[idx])
                if not math.isfinite(loss):
                    raise NonFiniteError(f"non-finite loss at step {step}")
                grads = {"head.weight": dlogits.T @ feats,
                         "head.bias": dlogits.sum(axis=0)}
                sgd.step(params, grads, lr_at(schedule, step))
                step += 1
            report = head_report(params["head.weight"], params["head.bias"])
            log.write(json.dumps({"epoch": epoch, "lr_groups": lrs,
                                  "val_wacc": report.wacc}, sort_keys=True) + "\n")
            if on_epoch_end is not None:
                on_epoch_end(epoch, params, report.wacc)

    report = head_report(params["head.weight"], params["head.bias"])
    ckpt_path = out / "model.ptf"
    _save_checkpoint(params, cfg, ckpt_path, best_epoch=cfg.epochs - 1,
                     best_val=report.wacc)
    _write_report(report, out / "report.json")
    return RunResult(params=params, report=report, checkpoint_path=ckpt_path,
                     log_path=log_path, best_epoch=cfg.epochs - 1)


def run_finetune(cfg: RunConfig,
                 on_epoch_end: Optional[Callable[[int, ParamSet, float], None]] = None
                 ) -> RunResult:
    """Full fine-tuning recipe: bottom-half freeze, AdamW with warmup +
    cosine decay + layerwise decay, early stopping on validation wAcc.

    The best-epoch checkpoint is kept on disk at every improvement, so an
    abort on a non-finite loss still leaves the last good model behind.
    """
    if cfg.mode != "finetune":
        raise ConfigError(f"run_finetune called with mode {cfg.mode!r}")
    config = cfg.model
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds = _load_train_val(cfg)
    params = prepare_params(cfg)
    spec = cfg.norm_spec
    schema = param_schema(config)

    n = len(train_ds)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    ckpt_path = out / "best.ptf"
    log_path = out / "train_log.jsonl"

    if cfg.epochs == 0:
        report = evaluate_params(config, params, val_ds, spec, cfg.batch_size)
        _save_checkpoint(params, cfg, ckpt_path, best_epoch=-1, best_val=report.wacc)
        _write_report(report, out / "report.json")
        log_path.write_text("")
        return RunResult(params=params, report=report, checkpoint_path=ckpt_path,
                         log_path=log_path, best_epoch=-1)

    schedule = ScheduleConfig(peak_lr=cfg.peak_lr, min_lr=cfg.min_lr,
                              warmup_steps=cfg.warmup_epochs * steps_per_epoch,
                              total_steps=cfg.epochs * steps_per_epoch)
    # a checkpoint exists from step zero, so an abort on a non-finite loss
    # always leaves a loadable last-good model behind
    _save_checkpoint(params, cfg, ckpt_path, best_epoch=-1, best_val=None)
    optimizer = AdamW(betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
                      weight_decay=cfg.weight_decay)
    policy = FreezePolicy(freeze_epochs=cfg.freeze_epochs)
    stopper = EarlyStopState(patience=cfg.patience)

    def scale_of(name: str) -> float:
        return layer_scale(param_group(name, config.depth), config.depth,
                           cfg.layerwise_decay)

    best_report: Optional[MetricsReport] = None
    step = 0
    with open(log_path, "w") as log:
        for epoch in range(cfg.epochs):
            trainable = apply_freeze(policy, epoch, config.depth)
            optimizer.sync_state([name for name in schema if trainable(name)])
            lrs = _lr_groups(step, schedule, config.depth, cfg.layerwise_decay)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                images = train_ds.images[idx]
                if cfg.augment:
                    images = _augment_batch(
                        images, np.random.default_rng([cfg.seed, epoch, int(lo)]))
                batch = _normalize_batch(images, spec, cfg.np_dtype)
                loss, grads = loss_and_grads(config, params, batch,
                                             train_ds.levels[idx], trainable)
                if not math.isfinite(loss):
                    raise NonFiniteError(
                        f"non-finite loss at epoch {epoch}, step {step}; "
                        f"last good checkpoint: {ckpt_path}")
                optimizer.step(params, grads, lr_at(schedule, step), scale_of)
                epoch_loss += loss
                step += 1

            report = evaluate_params(config, params, val_ds, spec, cfg.batch_size)
            stop = stopper.update(epoch, report.wacc, str(ckpt_path))
            if stopper.best_epoch == epoch:
                best_report = report
                _save_checkpoint(params, cfg, ckpt_path, best_epoch=epoch,
                                 best_val=report.wacc)
            log.write(json.dumps({
                "epoch": epoch, "lr_groups": lrs, "val_wacc": report.wacc,
                "train_loss": epoch_loss / steps_per_epoch,
            }, sort_keys=True) + "\n")
            if on_epoch_end is not None:
                on_epoch_end(epoch, params, report.wacc)
            if stop:
                break

    best_params, _ = ckpt_io.load(ckpt_path)
    best_params = {k: v.astype(cfg.np_dtype) for k, v in best_params.items()}
    _write_report(best_report, out / "report.json")
    return RunResult(params=best_params, report=best_report, checkpoint_path=ckpt_path,
                     log_path=log_path, best_epoch=stopper.best_epoch)


def _config_from_meta(meta: dict) -> tuple[ModelConfig, NormalizationSpec]:
    try:
        config = ModelConfig.from_meta(meta["model"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"checkpoint meta lacks a model description ({exc})")
    preset = meta.get("normalization", "unit")
    if preset not in NORMALIZATION_PRESETS:
        raise ConfigError(f"checkpoint meta names unknown normalization {preset!r}")
    return config, NORMALIZATION_PRESETS[preset]


def run_eval(checkpoint, manifest_path, out_path=None, batch_size: int = 32) -> MetricsReport:
    """Deterministic evaluation of a checkpoint on a manifest."""
    params, meta = ckpt_io.load(checkpoint)
    config, spec = _config_from_meta(meta)
    report_check = ckpt_io.validate_names(params, config)
    if not report_check.ok:
        raise NameValidationError(f"{checkpoint}: {report_check.describe()}")
    ds = load_dataset(load_manifest(manifest_path))
    report = evaluate_params(config, params, ds, spec, batch_size)
    if out_path is not None:
        _write_report(report, Path(out_path))
    return report


def run_attention(checkpoint, image_path, mass: float, out_path):
    """Render the last-layer attention-mass mask for one image as a binary
    PGM at input resolution; returns (mask, kept_count, kept_fraction)."""
    params, meta = ckpt_io.load(checkpoint)
    config, spec = _config_from_meta(meta)
    img = load_image(image_path)
    if img.shape != (config.img_size, config.img_size):
        raise VitgradeError(
            f"{image_path}: image is {img.shape}, model expects "
            f"({config.img_size}, {config.img_size})")
    batch = _normalize_batch(img[None], spec, params["cls_token"].dtype)
    trace = forward(config, params, batch, capture_attention=True)
    mask = attention_mask(trace, layer=-1, mass_threshold=mass)
    pixels = upsample_mask(mask, config.patch_size)
    save_pgm(out_path, pixels.astype(np.uint8) * 255)
    return mask, mask.kept_count, mask.kept_fraction


def export_features(checkpoint, manifest_path, out_path, batch_size: int = 32) -> int:
    """CSV of final-norm CLS features, one row per manifest entry in order.

    Header: path,level,f0..f{D-1}. Returns the number of rows written.
    """
    params, meta = ckpt_io.load(checkpoint)
    config, spec = _config_from_meta(meta)
    manifest = load_manifest(manifest_path)
    ds = load_dataset(manifest)
    _, feats = forward_dataset(config, params, ds, spec, batch_size)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "level"] + [f"f{i}" for i in range(feats.shape[1])])
        for entry, row in zip(manifest, feats):
            writer.writerow([str(entry.path), entry.level] + [repr(float(v)) for v in row])
    return len(manifest)
