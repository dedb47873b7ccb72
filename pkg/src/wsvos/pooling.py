"""Ranked top-k spatial and temporal pooling.

Feature volumes are ``(..., D, h, w, C)``. Spatial pooling reduces each
frame to one value per channel, temporal pooling then reduces the frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

POOLING_MODES = ("ranked_topk", "average", "max")


@dataclass
class PoolingConfig:
    mode: str = "ranked_topk"
    k1_fraction: float = 0.10
    k2_fraction: float = 0.40

    def validate(self) -> list[str]:
        problems = []
        if self.mode not in POOLING_MODES:
            problems.append(f"mode must be one of {POOLING_MODES}, got {self.mode!r}")
        for name in ("k1_fraction", "k2_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                problems.append(f"{name} must lie in (0, 1], got {value}")
        return problems

    def resolve(self, num_patches: int, num_frames: int) -> tuple[int, int]:
        """Return the concrete ``(k1, k2)`` for a ``num_patches`` x ``num_frames`` volume."""
        if self.mode == "average":
            return num_patches, num_frames
        if self.mode == "max":
            return 1, 1
        return fraction_to_k(self.k1_fraction, num_patches), fraction_to_k(self.k2_fraction, num_frames)


def fraction_to_k(fraction: float, n: int) -> int:
    # the epsilon keeps e.g. 0.4 * 5 = 2.0000000000000004 from rounding up to 3
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


def _topk_mean(x: torch.Tensor, k: int, dim: int) -> torch.Tensor:
    n = x.shape[dim]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    if k == n:
        ranked = x
    else:
        # stable descending sort: ties resolve to the lower flattened index
        ranked, _ = torch.sort(x, dim=dim, descending=True, stable=True)
        ranked = ranked.narrow(dim, 0, k)
    return ranked.mean(dim=dim)


def ranked_topk_spatial(features: torch.Tensor, k1: int) -> torch.Tensor:
    """Average of the ``k1`` largest spatial values per frame and channel.

    ``(..., D, h, w, C) -> (..., D, C)``
    """
    flat = features.flatten(-3, -2)
    return _topk_mean(flat, k1, dim=-2)


def ranked_topk_temporal(slices: torch.Tensor, k2: int) -> torch.Tensor:
    """Average of the ``k2`` largest per-frame values per channel.

    ``(..., D, C) -> (..., C)``
    """
    return _topk_mean(slices, k2, dim=-2)


def pool(features: torch.Tensor, cfg: PoolingConfig) -> torch.Tensor:
    """Spatial then temporal pooling of a ``(..., D, h, w, C)`` volume to ``(..., C)``."""
    d, h, w = features.shape[-4:-1]
    k1, k2 = cfg.resolve(h * w, d)
    return ranked_topk_temporal(ranked_topk_spatial(features, k1), k2)
