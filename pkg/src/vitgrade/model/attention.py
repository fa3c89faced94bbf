"""Attention-mass masks: which patches carry a given fraction of the
CLS token's attention.

The CLS row of a layer's attention is head-averaged, restricted to patch
tokens and renormalized; patches are then kept greedily by descending mass
until the cumulative fraction reaches the threshold. The kept set is minimal:
dropping its weakest member falls below the threshold.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import VitgradeError
from .network import ForwardTrace


@dataclass
class AttentionMask:
    grid: np.ndarray          # [G, G] bool, row-major patch layout
    mass_threshold: float
    kept_fraction: float

    @property
    def kept_count(self) -> int:
        return int(self.grid.sum())


def minimal_mass_prefix(masses: np.ndarray, mass_threshold: float):
    """Smallest descending-mass prefix whose cumulative fraction reaches the
    threshold; returns (kept indices, kept_fraction).

    Ties are broken toward the lower patch index. Fractions are taken
    against the running-sum total, so a threshold of 1.0 keeps exactly the
    nonzero-mass patches.
    """
    if not 0.0 < mass_threshold <= 1.0:
        raise VitgradeError(f"mass threshold must be in (0, 1], got {mass_threshold}")
    masses = np.asarray(masses, dtype=np.float64).reshape(-1)
    order = np.argsort(-masses, kind="stable")
    csum = np.cumsum(masses[order])
    total = csum[-1]
    if total <= 0:
        raise VitgradeError("attention mass is not positive")
    frac = csum / total
    kept = int(np.searchsorted(frac, mass_threshold, side="left")) + 1
    kept = min(kept, masses.size)
    return order[:kept], float(frac[kept - 1])


def mask_from_patch_masses(masses: np.ndarray, mass_threshold: float) -> AttentionMask:
    """Minimal mask over a row-major square patch grid."""
    masses = np.asarray(masses, dtype=np.float64).reshape(-1)
    n = masses.size
    grid = math.isqrt(n)
    if grid * grid != n:
        raise VitgradeError(f"{n} patches do not form a square grid")
    kept_idx, kept_fraction = minimal_mass_prefix(masses, mass_threshold)
    mask = np.zeros(n, dtype=bool)
    mask[kept_idx] = True
    return AttentionMask(grid=mask.reshape(grid, grid),
                         mass_threshold=float(mass_threshold),
                         kept_fraction=kept_fraction)


def attention_mask(trace: ForwardTrace, layer: int, mass_threshold: float,
                   batch_index: int = 0) -> AttentionMask:
    """Mask from a captured trace: CLS attention to patches at `layer`,
    averaged over heads."""
    if trace.attention is None:
        raise VitgradeError("trace has no attention; run forward with capture_attention")
    if not -len(trace.attention) <= layer < len(trace.attention):
        raise VitgradeError(
            f"layer {layer} out of range for depth {len(trace.attention)}")
    attn = trace.attention[layer]                 # [B, H, T, T]
    cls_to_patches = attn[batch_index, :, 0, 1:]  # [H, T-1]
    masses = cls_to_patches.mean(axis=0)
    return mask_from_patch_masses(masses, mass_threshold)


def upsample_mask(mask: AttentionMask, patch: int) -> np.ndarray:
    """Nearest-neighbour upsample of the patch grid to pixel resolution."""
    return np.kron(mask.grid, np.ones((patch, patch), dtype=bool))
