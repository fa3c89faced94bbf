"""Optimizers, schedules and training policies.

Covers the two training recipes end to end: SGD with momentum for the
linear probe, AdamW with linear warmup, cosine decay and layerwise decay
for fine-tuning, plus the bottom-half freeze policy and early stopping.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NonFiniteError
from .model.config import block_of
from .model.params import ParamSet


@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float
    min_lr: float = 0.0
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.min_lr <= self.peak_lr:
            raise ConfigError(f"need 0 <= min_lr <= peak_lr, got {self.min_lr}, {self.peak_lr}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")


def lr_at(schedule: ScheduleConfig, step: int) -> float:
    """Learning rate at a 0-based step: linear ramp to the peak over the
    warmup, then cosine decay to min_lr."""
    w, t = schedule.warmup_steps, schedule.total_steps
    if not 0 <= step < t:
        raise ConfigError(f"step {step} outside 0..{t - 1}")
    if step < w:
        return schedule.peak_lr * (step + 1) / w
    span = schedule.peak_lr - schedule.min_lr
    phase = math.pi * (step - w) / (t - w)
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(phase))


def layer_scale(group: int, depth: int, decay: float) -> float:
    """Layerwise multiplier: group 0 = embeddings, b+1 = block b,
    depth+1 = final norm + head. The head group is always 1.0."""
    if not 0 <= group <= depth + 1:
        raise ConfigError(f"group {group} outside 0..{depth + 1}")
    return decay ** (depth + 1 - group)


def param_group(name: str, depth: int) -> int:
    blk = block_of(name)
    if blk is not None:
        return blk + 1
    if name in ("cls_token", "pos_embed") or name.startswith("patch_embed."):
        return 0
    return depth + 1  # final norm and head


def _check_finite(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite gradient for {name}")


class SgdMomentum:
    """SGD with classic momentum: v <- mu*v + g; theta <- theta - lr*v."""

    def __init__(self, momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self.velocity: ParamSet = {}

    def sync_state(self, names) -> None:
        """Keep state exactly for the currently trainable names."""
        names = set(names)
        for stale in set(self.velocity) - names:
            del self.velocity[stale]

    def step(self, params: ParamSet, grads: ParamSet, lr: float) -> None:
        for name, g in grads.items():
            _check_finite(name, g)
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(params[name])
            v = self.momentum * v + g
            self.velocity[name] = v
            params[name] = params[name] - lr * v


class AdamW:
    """AdamW with decoupled weight decay and per-parameter step counters.

    Newly trainable parameters start from fresh (zero) state; their bias
    correction restarts at t=1.
    """

    def __init__(self, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1), got {betas}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.betas = (b1, b2)
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: ParamSet = {}
        self.v: ParamSet = {}
        self.t: dict[str, int] = {}

    def sync_state(self, names) -> None:
        names = set(names)
        for stale in set(self.t) - names:
            del self.m[stale]
            del self.v[stale]
            del self.t[stale]

    def step(self, params: ParamSet, grads: ParamSet, lr: float,
             scale_of: Optional[Callable[[str], float]] = None) -> None:
        b1, b2 = self.betas
        for name, g in grads.items():
            _check_finite(name, g)
            scale = 1.0 if scale_of is None else scale_of(name)
            if name not in self.t:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m = b1 * self.m[name] + (1.0 - b1) * g
            v = b2 * self.v[name] + (1.0 - b2) * np.square(g)
            self.m[name] = m
            self.v[name] = v
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            update = mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * params[name]
            params[name] = params[name] - lr * scale * update


@dataclass(frozen=True)
class FreezePolicy:
    freeze_epochs: int = 30

    def frozen_names(self, epoch: int, depth: int) -> frozenset[str] | None:
        """Prefix set frozen at this epoch, or None when nothing is frozen.

        During the freeze phase the embeddings and the bottom half of the
        blocks (b < floor(depth/2)) are held fixed.
        """
        if epoch >= self.freeze_epochs:
            return None
        bottom = depth // 2
        names = {"cls_token", "pos_embed", "patch_embed."}
        names.update(f"blocks.{b}." for b in range(bottom))
        return frozenset(names)


def apply_freeze(policy: FreezePolicy, epoch: int, depth: int) -> Callable[[str], bool]:
    """Trainable-name predicate for an epoch under the freeze policy."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    frozen = policy.frozen_names(epoch, depth)
    if frozen is None:
        return lambda name: True

    def trainable(name: str) -> bool:
        return not any(name == f or name.startswith(f) for f in frozen)

    return trainable


@dataclass
class EarlyStopState:
    patience: int = 20
    monitored: str = "val_wacc"
    best_value: float = -math.inf
    best_epoch: int = -1
    best_checkpoint_ref: Optional[str] = None
    stopped: bool = False
    history: list = field(default_factory=list)

    def update(self, epoch: int, value: float, checkpoint_ref: Optional[str] = None) -> bool:
        """Record an epoch's metric; returns True when training should stop.

        Strict improvements move the best marker (ties keep the earlier
        epoch). Stopping triggers on a non-improving epoch once the gap to
        the best epoch reaches the patience.
        """
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite {self.monitored}: {value}")
        self.history.append((epoch, value))
        if value > self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            if checkpoint_ref is not None:
                self.best_checkpoint_ref = checkpoint_ref
            return False
        if epoch - self.best_epoch >= self.patience:
            self.stopped = True
        return self.stopped


def early_stop_update(state: EarlyStopState, epoch: int, val_metric: float,
                      checkpoint_ref: Optional[str] = None) -> bool:
    return state.update(epoch, val_metric, checkpoint_ref)
