"""Positional-embedding resampling for resolution changes.

Checkpoints pretrained at one resolution carry a [1, 1+G^2, D] positional
table; fine-tuning at another resolution needs [1, 1+G'^2, D]. The CLS slot
is copied unchanged and the patch grid is resampled bicubically per channel.
"""

import math

import numpy as np
from scipy import ndimage

from ..errors import ShapeError


def interpolate_pos_embed(pos: np.ndarray, new_grid: int) -> np.ndarray:
    if pos.ndim != 3 or pos.shape[0] != 1:
        raise ShapeError(f"pos_embed must be [1, 1+G^2, D], got {pos.shape}")
    n_patches = pos.shape[1] - 1
    grid = math.isqrt(n_patches)
    if grid * grid != n_patches or n_patches < 1:
        raise ShapeError(
            f"pos_embed has {n_patches} patch slots, not a square grid")
    if new_grid < 1:
        raise ShapeError(f"new grid size must be >= 1, got {new_grid}")
    if new_grid == grid:
        return pos.copy()

    d = pos.shape[2]
    patch_tab = pos[0, 1:, :].reshape(grid, grid, d).astype(np.float64)
    zoom = new_grid / grid
    resized = ndimage.zoom(patch_tab, (zoom, zoom, 1.0), order=3, mode="reflect",
                           grid_mode=False)
    if resized.shape[:2] != (new_grid, new_grid):  # guard against rounding
        raise ShapeError(
            f"resample produced grid {resized.shape[:2]}, wanted {new_grid}")
    out = np.empty((1, 1 + new_grid * new_grid, d), dtype=pos.dtype)
    out[0, 0, :] = pos[0, 0, :]
    out[0, 1:, :] = resized.reshape(new_grid * new_grid, d).astype(pos.dtype)
    return out
