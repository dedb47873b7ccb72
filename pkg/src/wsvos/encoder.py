"""Video clips and per-frame patch-embedding backbones.

Tensors follow a frames-first, channels-last layout throughout the package:
a clip is ``(D, H, W, ch)`` and a token grid is ``(D, h, w, C_e)``, with a
leading batch axis when batched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np
import torch
from torch import nn


@dataclass
class VideoClip:
    """A fixed-length frame sequence with a video-level multi-label vector.

    ``masks``, ``boxes`` and ``frame_labels`` are ground truth used for
    evaluation only; training reads ``frames`` and ``label``.
    """

    frames: np.ndarray  # (D, H, W, ch) float32 in [0, 1]
    label: np.ndarray  # (N,) of 0/1
    clip_id: str = ""
    masks: Optional[np.ndarray] = None  # (D, H, W, N) bool
    boxes: Optional[list] = None  # boxes[d][n] -> list of (x0, y0, x1, y1)
    frame_labels: Optional[np.ndarray] = None  # (D, N) of 0/1

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim == 3:
            self.frames = self.frames[..., None]
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (D, H, W, ch), got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("a clip needs at least one frame")
        self.label = np.asarray(self.label, dtype=np.int64).reshape(-1)
        if not np.isin(self.label, (0, 1)).all():
            raise ValueError(f"label entries must be 0 or 1, got {self.label.tolist()}")
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
            d, h, w = self.frames.shape[:3]
            if self.masks.shape != (d, h, w, self.num_classes):
                raise ValueError(
                    f"masks shape {self.masks.shape} does not match frames "
                    f"{(d, h, w)} x {self.num_classes} classes"
                )
            if self.frame_labels is None:
                self.frame_labels = self.masks.any(axis=(1, 2)).astype(np.int64)
        if self.frame_labels is not None:
            self.frame_labels = np.asarray(self.frame_labels, dtype=np.int64)
            if self.frame_labels.shape != (self.num_frames, self.num_classes):
                raise ValueError(f"frame_labels shape {self.frame_labels.shape} is not (D, N)")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_classes(self) -> int:
        return self.label.shape[0]

    @property
    def frame_size(self) -> tuple[int, int]:
        """(H, W) in pixels."""
        return self.frames.shape[1], self.frames.shape[2]


@runtime_checkable
class Backbone(Protocol):
    """Anything that maps ``(B, D, H, W, ch)`` frames to ``(B, D, h, w, C_e)`` tokens.

    Implementations must encode every frame independently.
    """

    patch_size: int
    embed_dim: int

    def __call__(self, frames: torch.Tensor) -> torch.Tensor: ...


class _PatchMixer(nn.Module):
    # residual 3x3 conv over the patch grid of a single frame
    def __init__(self, dim):
        super().__init__()
        self.conv = nn.Conv2d(dim, dim, kernel_size=3, padding=1)
        self.act = nn.GELU()

    def forward(self, x):
        return x + self.act(self.conv(x))


class ToyBackbone(nn.Module):
    """Small trainable per-frame patch embedder.

    Patchify + linear projection (a strided convolution), followed by
    ``depth`` residual mixing layers that only see patches of the same frame.
    """

    def __init__(self, patch_size=8, embed_dim=64, depth=2, in_channels=3):
        super().__init__()
        if patch_size < 1 or embed_dim < 1 or depth < 0 or in_channels < 1:
            raise ValueError("patch_size, embed_dim and in_channels must be >= 1 and depth >= 0")
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.depth = depth
        self.in_channels = in_channels
        self.proj = nn.Conv2d(in_channels, embed_dim, kernel_size=patch_size, stride=patch_size)
        self.mixers = nn.ModuleList(_PatchMixer(embed_dim) for _ in range(depth))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        b, d, H, W, ch = frames.shape
        check_patch_divisible(H, W, self.patch_size)
        x = frames.reshape(b * d, H, W, ch).permute(0, 3, 1, 2)
        x = self.proj(x)
        for mixer in self.mixers:
            x = mixer(x)
        x = x.permute(0, 2, 3, 1)
        return x.reshape(b, d, *x.shape[1:])


def make_toy_backbone(patch_size: int = 8, embed_dim: int = 64, depth: int = 2, seed: int = 0,
                      in_channels: int = 3) -> ToyBackbone:
    """Build a ToyBackbone whose parameters depend only on ``seed``."""
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    if embed_dim < 1:
        raise ValueError(f"embed_dim must be >= 1, got {embed_dim}")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ToyBackbone(patch_size, embed_dim, depth, in_channels)


def check_patch_divisible(H: int, W: int, patch_size: int) -> None:
    if H % patch_size or W % patch_size:
        raise ValueError(
            f"frame size {H}x{W} is not divisible by patch size {patch_size}"
        )


def encode(clip: VideoClip, backbone: Backbone) -> torch.Tensor:
    """Encode one clip into a ``(D, h, w, C_e)`` token grid.

    Runs without gradient tracking; the trainer calls the backbone directly
    on batches when gradients are needed.
    """
    H, W = clip.frame_size
    check_patch_divisible(H, W, backbone.patch_size)
    frames = torch.from_numpy(clip.frames).unsqueeze(0)
    try:
        with torch.no_grad():
            tokens = backbone(frames)
    except Exception as exc:
        raise RuntimeError(f"backbone failed on clip {clip.clip_id!r}: {exc}") from exc
    expected = (1, clip.num_frames, H // backbone.patch_size, W // backbone.patch_size, backbone.embed_dim)
    if tuple(tokens.shape) != expected:
        raise RuntimeError(
            f"backbone returned tokens of shape {tuple(tokens.shape)} for clip "
            f"{clip.clip_id!r}, expected {expected}"
        )
    return tokens[0]
