"""Temporal-convolution student head."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .pooling import PoolingConfig, pool
from .teacher import class_activation_map, seeded_dropout


class StudentHead(nn.Module):
    """Stacked 3D convolutions over (time, height, width) with a linear classifier.

    Padding keeps the ``(D, h, w)`` grid unchanged, so student CAMs line up
    voxel for voxel with the teacher's.
    """

    def __init__(self, in_channels, num_classes, hidden_width=256, out_channels=256,
                 num_layers=4, temporal_kernel=3, spatial_kernel=3, dropout=0.5,
                 padding_mode="replicate"):
        super().__init__()
        if temporal_kernel < 2 or temporal_kernel % 2 == 0:
            # an even kernel cannot pad symmetrically; 1 would make it per-frame
            raise ValueError(f"temporal_kernel must be odd and >= 3, got {temporal_kernel}")
        if spatial_kernel < 1 or spatial_kernel % 2 == 0:
            raise ValueError(f"spatial_kernel must be odd, got {spatial_kernel}")
        if not 0.0 <= dropout <= 1.0:
            raise ValueError(f"dropout must lie in [0, 1], got {dropout}")
        widths = [in_channels] + [hidden_width] * (num_layers - 1) + [out_channels]
        kernel = (temporal_kernel, spatial_kernel, spatial_kernel)
        padding = tuple(k // 2 for k in kernel)
        self.convs = nn.ModuleList(
            nn.Conv3d(a, b, kernel_size=kernel, padding=padding, padding_mode=padding_mode)
            for a, b in zip(widths[:-1], widths[1:])
        )
        self.classifier = nn.Linear(out_channels, num_classes)
        self.dropout = dropout
        self.temporal_kernel = temporal_kernel
        self.in_channels = in_channels
        self.out_channels = out_channels

    @property
    def temporal_receptive_field(self) -> int:
        return 1 + len(self.convs) * (self.temporal_kernel - 1)

    def features(self, tokens: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        if tokens.shape[-1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} token channels, got {tokens.shape[-1]}")
        x = tokens.permute(0, 4, 1, 2, 3)
        for conv in self.convs:
            x = F.relu(conv(x))
        x = x.permute(0, 2, 3, 4, 1)
        return seeded_dropout(x, self.dropout, self.training, generator)

    def forward(self, tokens, pooling: PoolingConfig, generator=None):
        feats = self.features(tokens, generator)
        logits = self.classifier(pool(feats, pooling))
        return feats, logits

    def cam(self, feats: torch.Tensor) -> torch.Tensor:
        return class_activation_map(feats, self.classifier)


def student_forward(tokens: torch.Tensor, head: StudentHead, train_mode: bool,
                    cfg: PoolingConfig, generator: Optional[torch.Generator] = None):
    """Run the student on a batch of token grids, returning ``(F_s, logits)``."""
    head.train(train_mode)
    return head(tokens, cfg, generator)


def student_stcam(features: torch.Tensor, head: StudentHead) -> torch.Tensor:
    if features.shape[-1] != head.out_channels:
        raise ValueError(f"expected {head.out_channels} feature channels, got {features.shape[-1]}")
    return head.cam(features)
