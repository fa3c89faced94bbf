"""Flat key-value run configuration files.

One ``key = value`` pair per line; blank lines and lines starting with
``#`` are ignored. Values are plain strings here; typed conversion happens
when they are folded into RunConfig / SyntheticSpec.
"""

from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .pipeline import RunConfig
from .synth import DEFAULT_AMPLITUDES, DEFAULT_FREQUENCIES, SyntheticSpec


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _convert(key: str, raw, kind):
    if not isinstance(raw, str):
        return raw
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}")


_MODEL_KEYS = {
    "img_size": int, "patch_size": int, "embed_dim": int, "depth": int,
    "num_heads": int, "mlp_ratio": float, "num_classes": int, "in_channels": int,
}

_RUN_KEYS = {
    "mode": str, "manifest": Path, "val_manifest": Path, "split_ratio": float,
    "seed": int, "normalization": str, "batch_size": int, "epochs": int,
    "dtype": str, "augment": bool, "init_ckpt": Path, "out_dir": Path,
    "probe_lr": float, "probe_momentum": float, "probe_min_lr": float,
    "peak_lr": float, "min_lr": float, "warmup_epochs": int,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "weight_decay": float, "layerwise_decay": float, "freeze_epochs": int,
    "patience": int, "mass": float, "image": Path,
}

_SYNTH_KEYS = {
    "synth_img_size": int, "synth_fibers_min": int, "synth_fibers_max": int,
    "synth_sigma": float, "synth_noise_std": float, "synth_per_level": int,
}

_SYNTH_RANGE_KEYS = {
    f"synth_{kind}{t}_{edge}"
    for kind in ("amp", "freq") for t in range(1, 5) for edge in ("min", "max")
}


def validate_keys(values: dict[str, str]) -> None:
    known = set(_MODEL_KEYS) | set(_RUN_KEYS) | set(_SYNTH_KEYS) | _SYNTH_RANGE_KEYS
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def build_run_config(values: dict[str, str], overrides: dict | None = None) -> RunConfig:
    """Typed RunConfig from config-file values plus CLI overrides."""
    validate_keys(values)
    model_kwargs = {k: _convert(k, values[k], kind)
                    for k, kind in _MODEL_KEYS.items() if k in values}
    run_kwargs = {k: _convert(k, values[k], kind)
                  for k, kind in _RUN_KEYS.items() if k in values}
    if overrides:
        for k, v in overrides.items():
            if v is not None:
                run_kwargs[k] = _convert(k, v, _RUN_KEYS[k])
    return RunConfig(model=ModelConfig(**model_kwargs), **run_kwargs)


def build_synthetic_spec(values: dict[str, str], seed: int | None = None) -> SyntheticSpec:
    validate_keys(values)
    rename = {"synth_img_size": "img_size", "synth_fibers_min": "fibers_min",
              "synth_fibers_max": "fibers_max", "synth_sigma": "line_sigma",
              "synth_noise_std": "noise_std"}
    kwargs = {}
    for key, kind in _SYNTH_KEYS.items():
        if key != "synth_per_level" and key in values:
            kwargs[rename[key]] = _convert(key, values[key], kind)

    def ranges(prefix: str, defaults):
        out = []
        for t in range(1, 5):
            lo_key, hi_key = f"{prefix}{t}_min", f"{prefix}{t}_max"
            lo = _convert(lo_key, values[lo_key], float) if lo_key in values else defaults[t - 1][0]
            hi = _convert(hi_key, values[hi_key], float) if hi_key in values else defaults[t - 1][1]
            out.append((lo, hi))
        return tuple(out)

    kwargs["amplitudes"] = ranges("synth_amp", DEFAULT_AMPLITUDES)
    kwargs["frequencies"] = ranges("synth_freq", DEFAULT_FREQUENCIES)
    if seed is not None:
        kwargs["seed"] = seed
    elif "seed" in values:
        kwargs["seed"] = _convert("seed", values["seed"], int)
    return SyntheticSpec(**kwargs)


def synth_per_level(values: dict[str, str], default: int = 50) -> int:
    if "synth_per_level" in values:
        return _convert("synth_per_level", values["synth_per_level"], int)
    return default
