"""Dataset ingestion: manifests, grayscale images, normalization and the
stratified train/val split.

Manifests are CSV files with a `path,level` header; relative paths resolve
against the manifest's directory. Binary PGM (P5, maxval 255) is the native
image format and round-trips bit-exactly; 8-bit grayscale PNG works when
Pillow is installed.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ImageFormatError, ManifestError, ManifestNotFoundError, VitgradeError
from .metrics import NUM_LEVELS


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    level: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def level_counts(self) -> tuple[int, ...]:
        counts = [0] * NUM_LEVELS
        for e in self.entries:
            counts[e.level - 1] += 1
        return tuple(counts)

    def subset(self, indices: Sequence[int]) -> "DatasetManifest":
        return DatasetManifest([self.entries[i] for i in indices])


def load_manifest(path, indices: Optional[Sequence[int]] = None) -> DatasetManifest:
    """Read a `path,level` CSV; optionally keep only the given row indices
    (0-based, in file order)."""
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "level"]:
            raise ManifestError(f"{path}: expected 'path,level' header, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ManifestError(f"{path}:{lineno}: malformed row {row}")
            try:
                level = int(row[1])
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: level {row[1]!r} is not an integer")
            if not 1 <= level <= NUM_LEVELS:
                raise ManifestError(f"{path}:{lineno}: level {level} outside 1..{NUM_LEVELS}")
            img = Path(row[0])
            if not img.is_absolute():
                img = path.parent / img
            if not img.is_file():
                raise ManifestError(f"{path}:{lineno}: image not found: {img}")
            entries.append(ManifestEntry(path=img, level=level))
    manifest = DatasetManifest(entries)
    if indices is not None:
        manifest = manifest.subset(list(indices))
    return manifest


def load_pgm(path) -> np.ndarray:
    """Binary PGM (P5, maxval 255) -> float [H, W] in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric PGM header fields")
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    expected = w * h
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise ImageFormatError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return img.astype(np.float32) / 255.0


def save_pgm(path, image: np.ndarray) -> None:
    """Write float [H, W] in [0, 1] (or uint8) as binary PGM."""
    if image.ndim != 2:
        raise ImageFormatError(f"PGM images must be 2-D, got shape {image.shape}")
    if image.dtype == np.uint8:
        raster = image
    else:
        raster = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())


def load_image(path) -> np.ndarray:
    """Grayscale image -> float [H, W] in [0, 1] (8-bit values / 255)."""
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"image not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return load_pgm(path)
    if suffix == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise ImageFormatError("PNG support requires Pillow (pip install vitgrade[png])")
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        return arr.astype(np.float32) / 255.0
    raise ImageFormatError(f"{path}: unsupported image format {suffix!r}")


@dataclass(frozen=True)
class NormalizationSpec:
    mean: tuple[float, ...]
    std: tuple[float, ...]
    replicate_channels: bool = True

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise VitgradeError("mean and std must have the same length")
        if any(s <= 0 for s in self.std):
            raise VitgradeError(f"std must be positive, got {self.std}")


NORMALIZATION_PRESETS = {
    # synthetic/grayscale default
    "unit": NormalizationSpec(mean=(0.5,), std=(0.5,), replicate_channels=False),
    # upstream 3-channel preprocessing convention for converted checkpoints
    "pretrained": NormalizationSpec(mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)),
}


def normalize(image: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """[H, W] grayscale -> standardized [C, H, W]."""
    if image.ndim != 2:
        raise VitgradeError(f"expected [H, W] grayscale, got shape {image.shape}")
    channels = len(spec.mean)
    if spec.replicate_channels and channels > 1:
        stack = np.repeat(image[None, :, :], channels, axis=0)
    elif channels == 1:
        stack = image[None, :, :]
    else:
        raise VitgradeError(
            f"{channels}-channel spec without replication on a grayscale image")
    mean = np.asarray(spec.mean, dtype=image.dtype).reshape(-1, 1, 1)
    std = np.asarray(spec.std, dtype=image.dtype).reshape(-1, 1, 1)
    return (stack - mean) / std


def stratified_split(manifest: DatasetManifest, ratio: float, seed: int):
    """Per-level split into (train, val): floor(ratio * n_c) to train (at
    least 1 when the level has >= 2 samples), the rest to val. The
    within-level shuffle is deterministic for a fixed seed and the result
    is an exact partition of the manifest."""
    if not 0.0 < ratio < 1.0:
        raise VitgradeError(f"split ratio must be in (0, 1), got {ratio}")
    if len(manifest) == 0:
        raise ManifestError("cannot split an empty manifest")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for level in range(1, NUM_LEVELS + 1):
        idx = [i for i, e in enumerate(manifest.entries) if e.level == level]
        if not idx:
            continue
        order = rng.permutation(len(idx))
        # floor of the exact product; the 1e-9 shields fp-noise like 0.7*50
        n_train = int(np.floor(ratio * len(idx) + 1e-9))
        if n_train == 0 and len(idx) >= 2:
            n_train = 1
        picked = [idx[i] for i in order]
        train_idx.extend(picked[:n_train])
        val_idx.extend(picked[n_train:])
    return manifest.subset(train_idx), manifest.subset(val_idx)
