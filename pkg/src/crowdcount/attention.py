"""Channel and spatial gating applied after convolution layers.

Both gates squash to (0, 1) through a sigmoid and rescale the input; the
combined block keeps the element-wise maximum of the two recalibrated maps.
Biases start at zero so a zero input yields gates of exactly 0.5.
"""

from __future__ import annotations

import torch
from torch import nn


class ChannelGate(nn.Module):
    """Spatially pooled two-layer bottleneck producing one weight per channel."""

    def __init__(self, channels: int):
        super().__init__()
        hidden = (channels + 1) // 2  # ceil keeps odd widths legal
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        nn.init.zeros_(self.fc1.bias)
        nn.init.zeros_(self.fc2.bias)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        squeezed = x.mean(dim=(-2, -1))
        return torch.sigmoid(self.fc2(self.fc1(squeezed)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gates(x)[..., None, None]


class SpatialGate(nn.Module):
    """1x1 convolution producing one weight per spatial location."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 1, kernel_size=1)
        nn.init.zeros_(self.conv.bias)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gates(x)


class ChannelSpatialAttention(nn.Module):
    """Recalibrate with both gates, keep the stronger response per element."""

    def __init__(self, channels: int):
        super().__init__()
        self.channel = ChannelGate(channels)
        self.spatial = SpatialGate(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.max(self.channel(x), self.spatial(x))
