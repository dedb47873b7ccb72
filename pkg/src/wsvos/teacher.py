"""Per-position MLP teacher head.

The teacher never mixes information across frames, so its class activation
maps at frame ``d`` depend on frame ``d`` alone.
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .pooling import PoolingConfig, pool


def seeded_dropout(x: torch.Tensor, p: float, training: bool,
                   generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Inverted dropout drawing its mask from ``generator`` when given."""
    if not training or p == 0.0:
        return x
    if p >= 1.0:
        return torch.zeros_like(x)
    if generator is None:
        return F.dropout(x, p, training=True)
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


def class_activation_map(features: torch.Tensor, classifier: nn.Linear) -> torch.Tensor:
    """ReLU of features projected through the classifier weights (bias excluded).

    ``(..., D, h, w, C) -> (..., D, h, w, N)``
    """
    return F.relu(F.linear(features, classifier.weight))


def _check_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


class TeacherHead(nn.Module):
    """Four per-position Linear+ReLU layers, dropout, and a linear classifier.

    In training mode each layer's output is average-pooled 2x2 spatially with
    probability ``downsample_prob`` and the result is resized back to the
    input grid bilinearly before pooling.
    """

    def __init__(self, in_channels, num_classes, hidden_width=256, out_channels=256,
                 num_layers=4, dropout=0.5, downsample_prob=0.5):
        super().__init__()
        _check_probability("dropout", dropout)
        _check_probability("downsample_prob", downsample_prob)
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        widths = [in_channels] + [hidden_width] * (num_layers - 1) + [out_channels]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.classifier = nn.Linear(out_channels, num_classes)
        self.dropout = dropout
        self.downsample_prob = downsample_prob
        self.in_channels = in_channels
        self.out_channels = out_channels

    def features(self, tokens: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """``(B, D, h, w, C_e) -> (B, D, h, w, C)``"""
        if tokens.shape[-1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} token channels, got {tokens.shape[-1]}")
        b, d, h, w, _ = tokens.shape
        x = tokens
        for layer in self.layers:
            x = F.relu(layer(x))
            if self.training and self.downsample_prob > 0:
                # a draw is consumed per layer even when the size guard skips it
                u = torch.rand((), generator=generator).item()
                if u < self.downsample_prob and x.shape[2] // 2 >= 2 and x.shape[3] // 2 >= 2:
                    x = _spatial_avg_pool(x)
        if x.shape[2:4] != (h, w):
            x = _spatial_resize(x, h, w)
        return seeded_dropout(x, self.dropout, self.training, generator)

    def forward(self, tokens, pooling: PoolingConfig, generator=None):
        feats = self.features(tokens, generator)
        logits = self.classifier(pool(feats, pooling))
        return feats, logits

    def cam(self, feats: torch.Tensor) -> torch.Tensor:
        return class_activation_map(feats, self.classifier)


def _spatial_avg_pool(x):
    b, d, h, w, c = x.shape
    y = x.reshape(b * d, h, w, c).permute(0, 3, 1, 2)
    y = F.avg_pool2d(y, kernel_size=2, stride=2)
    return y.permute(0, 2, 3, 1).reshape(b, d, y.shape[2], y.shape[3], c)


def _spatial_resize(x, h, w):
    b, d, _, _, c = x.shape
    y = x.reshape(b * d, x.shape[2], x.shape[3], c).permute(0, 3, 1, 2)
    y = F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False)
    return y.permute(0, 2, 3, 1).reshape(b, d, h, w, c)


def teacher_forward(tokens: torch.Tensor, head: TeacherHead, train_mode: bool,
                    cfg: PoolingConfig, generator: Optional[torch.Generator] = None):
    """Run the teacher on a batch of token grids, returning ``(F_t, logits)``."""
    head.train(train_mode)
    return head(tokens, cfg, generator)


def teacher_stcam(features: torch.Tensor, head: TeacherHead) -> torch.Tensor:
    if features.shape[-1] != head.out_channels:
        raise ValueError(f"expected {head.out_channels} feature channels, got {features.shape[-1]}")
    return head.cam(features)
