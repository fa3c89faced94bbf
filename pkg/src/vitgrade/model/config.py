"""Model architecture description and the canonical parameter schema.

Parameter names follow the shared ViT state-dict convention (linear weights
stored [out, in], qkv packed as rows q|k|v) so converted upstream checkpoints
map onto them without transposition.
"""

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    img_size: int = 384
    patch_size: int = 16
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: float = 4.0
    num_classes: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.img_size % self.patch_size != 0:
            raise ConfigError(
                f"img_size {self.img_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.mlp_ratio <= 0:
            raise ConfigError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def grid_size(self) -> int:
        return self.img_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return 1 + self.grid_size ** 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    def to_meta(self) -> dict:
        return {
            "img_size": self.img_size,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "num_heads": self.num_heads,
            "mlp_ratio": self.mlp_ratio,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "ModelConfig":
        return cls(
            img_size=int(meta["img_size"]),
            patch_size=int(meta["patch_size"]),
            embed_dim=int(meta["embed_dim"]),
            depth=int(meta["depth"]),
            num_heads=int(meta["num_heads"]),
            mlp_ratio=float(meta["mlp_ratio"]),
            num_classes=int(meta["num_classes"]),
            in_channels=int(meta["in_channels"]),
        )


BLOCK_PARAM_SUFFIXES = (
    "norm1.weight", "norm1.bias",
    "attn.qkv.weight", "attn.qkv.bias",
    "attn.proj.weight", "attn.proj.bias",
    "norm2.weight", "norm2.bias",
    "mlp.fc1.weight", "mlp.fc1.bias",
    "mlp.fc2.weight", "mlp.fc2.bias",
)


def param_schema(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map for a configuration.

    This is the stable contract between the engine, the checkpoint container
    and external weight converters.
    """
    d = config.embed_dim
    c = config.in_channels
    p = config.patch_size
    h = config.hidden_dim
    schema: dict[str, tuple[int, ...]] = {
        "cls_token": (1, 1, d),
        "pos_embed": (1, config.num_tokens, d),
        "patch_embed.weight": (d, c, p, p),
        "patch_embed.bias": (d,),
    }
    for b in range(config.depth):
        prefix = f"blocks.{b}."
        schema[prefix + "norm1.weight"] = (d,)
        schema[prefix + "norm1.bias"] = (d,)
        schema[prefix + "attn.qkv.weight"] = (3 * d, d)
        schema[prefix + "attn.qkv.bias"] = (3 * d,)
        schema[prefix + "attn.proj.weight"] = (d, d)
        schema[prefix + "attn.proj.bias"] = (d,)
        schema[prefix + "norm2.weight"] = (d,)
        schema[prefix + "norm2.bias"] = (d,)
        schema[prefix + "mlp.fc1.weight"] = (h, d)
        schema[prefix + "mlp.fc1.bias"] = (h,)
        schema[prefix + "mlp.fc2.weight"] = (d, h)
        schema[prefix + "mlp.fc2.bias"] = (d,)
    schema["norm.weight"] = (d,)
    schema["norm.bias"] = (d,)
    schema["head.weight"] = (config.num_classes, d)
    schema["head.bias"] = (config.num_classes,)
    return schema


def block_of(name: str) -> int | None:
    """Block index of a parameter name, or None for non-block parameters."""
    if name.startswith("blocks."):
        return int(name.split(".")[1])
    return None
