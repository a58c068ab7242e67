"""
FGD data types and the auxiliary modules trained alongside a student.
"""
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from apps.core.exceptions import ConfigurationError, ShapeError


@dataclass(frozen=True)
class FGDConfig:
    """Feature-imitation weights: foreground, background, attention, global"""
    sigma_fg: float = 1.6e-3
    beta_bg: float = 8e-4
    gamma_attn: float = 8e-4
    lambda_global: float = 8e-6
    temperature: float = 0.5

    def __post_init__(self):
        for name in ('sigma_fg', 'beta_bg', 'gamma_attn', 'lambda_global'):
            value = getattr(self, name)
            if not value >= 0:
                raise ConfigurationError(f'{name} must be non-negative, got {value}')
        if not self.temperature > 0:
            raise ConfigurationError(f'temperature must be positive, got {self.temperature}')


@dataclass
class FGDMasks:
    """Foreground/background masks of one level; tensors are (..., H, W)"""
    binary: Tensor
    scale: Tensor
    inverse_binary: Tensor
    inverse_scale: Tensor

    def to(self, device=None, dtype=None) -> 'FGDMasks':
        return FGDMasks(*(t.to(device=device, dtype=dtype) for t in
                          (self.binary, self.scale, self.inverse_binary, self.inverse_scale)))

    @classmethod
    def stack(cls, masks: Sequence['FGDMasks']) -> 'FGDMasks':
        return cls(
            torch.stack([m.binary for m in masks]),
            torch.stack([m.scale for m in masks]),
            torch.stack([m.inverse_binary for m in masks]),
            torch.stack([m.inverse_scale for m in masks]),
        )


@dataclass
class AttentionMaps:
    spatial: Tensor
    channel: Tensor


class GcBlock(nn.Module):
    """Global context block used by the global distillation term.

    Attention-pooled context goes through a 1x1 bottleneck with layer norm
    and is added back to every pixel. The last conv starts at zero, so a
    fresh block is the identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        # at least two values, or the layer norm output is constant
        hidden = max(2, channels // 2)
        self.channels = channels
        self.conv_mask = nn.Conv2d(channels, 1, kernel_size=1)
        self.channel_add = nn.Sequential(
            nn.Conv2d(channels, hidden, kernel_size=1),
            nn.LayerNorm([hidden, 1, 1]),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, kernel_size=1),
        )
        nn.init.kaiming_normal_(self.conv_mask.weight, mode='fan_in', nonlinearity='relu')
        nn.init.zeros_(self.conv_mask.bias)
        nn.init.zeros_(self.channel_add[-1].weight)
        nn.init.zeros_(self.channel_add[-1].bias)

    def context(self, feature: Tensor) -> Tensor:
        """Softmax-weighted pixel average, N x C x 1 x 1"""
        n, c, h, w = feature.shape
        weights = self.conv_mask(feature).view(n, 1, h * w).softmax(dim=-1)
        pooled = torch.bmm(feature.reshape(n, c, h * w), weights.transpose(1, 2))
        return pooled.view(n, c, 1, 1)

    def forward(self, feature: Tensor) -> Tensor:
        if feature.dim() != 4 or feature.shape[1] != self.channels:
            raise ShapeError(f'GcBlock expects N x {self.channels} x H x W, got {tuple(feature.shape)}')
        return feature + self.channel_add(self.context(feature))


class FeatureAdaptor(nn.Module):
    """Per-level 1x1 conv mapping student neck width onto the teacher's"""

    def __init__(self, student_channels: int, teacher_channels: int, num_levels: int):
        super().__init__()
        self.convs = nn.ModuleList(
            [nn.Conv2d(student_channels, teacher_channels, kernel_size=1) for _ in range(num_levels)]
        )

    def forward(self, features: Sequence[Tensor]) -> list:
        if len(features) != len(self.convs):
            raise ShapeError(f'Adaptor built for {len(self.convs)} levels, got {len(features)}')
        return [conv(f) for conv, f in zip(self.convs, features)]
