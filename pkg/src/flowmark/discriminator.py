"""Multiscale 3D video discriminator for adversarial quality training.

Four branches see the clip at different space-time scales (identity,
spatial half, temporal half, spatial quarter). Each branch is a small
stack of residual 3D conv units with stride-2 spatial pooling between
them; branch features are globally pooled, concatenated, and fused by
one fully-connected layer into a single realness logit.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ShapeError


class ResidualUnit3d(nn.Module):
    """conv3d-relu-conv3d with a (projected) skip connection."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Identity()
            if in_channels == out_channels
            else nn.Conv3d(in_channels, out_channels, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv2(F.relu(self.conv1(x)))
        return F.relu(y + self.skip(x))


class Branch3d(nn.Module):
    """Residual stack for one scale, ending in global average pooling."""

    def __init__(self, width: int, units: int):
        super().__init__()
        self.units = nn.ModuleList(
            ResidualUnit3d(3 if i == 0 else width, width)
            for i in range(units)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, unit in enumerate(self.units):
            x = unit(x)
            # stride-2 spatial downsample between units, where size allows
            if i + 1 < len(self.units):
                kh = 2 if x.shape[-2] >= 2 else 1
                kw = 2 if x.shape[-1] >= 2 else 1
                if kh > 1 or kw > 1:
                    x = F.avg_pool3d(x, kernel_size=(1, kh, kw))
        return x.mean(dim=(2, 3, 4))


def _rescale(clip, temporal: int = 1, spatial: int = 1):
    if temporal > 1 and clip.shape[2] >= temporal:
        clip = F.avg_pool3d(clip, kernel_size=(temporal, 1, 1))
    if spatial > 1:
        clip = F.avg_pool3d(clip, kernel_size=(1, spatial, spatial))
    return clip


class VideoDiscriminator(nn.Module):
    """Four-scale realness critic over [B, 3, L, H, W] clips."""

    SCALES = ((1, 1), (1, 2), (2, 1), (1, 4))  # (temporal, spatial) factors

    def __init__(self, width: int = 32, units: int = 3):
        super().__init__()
        self.width = width
        self.unit_count = units
        self.branches = nn.ModuleList(
            Branch3d(width, units) for _ in self.SCALES
        )
        self.head = nn.Linear(width * len(self.SCALES), 1)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        if clips.dim() != 5 or clips.shape[1] != 3:
            raise ShapeError("discriminator expects [B, 3, L, H, W]")
        if clips.shape[-2] < 4 or clips.shape[-1] < 4:
            raise ShapeError("clip spatial size must be at least 4x4")
        features = [
            branch(_rescale(clips, temporal, spatial))
            for branch, (temporal, spatial) in zip(self.branches, self.SCALES)
        ]
        return self.head(torch.cat(features, dim=1)).squeeze(1)

    def discriminate(self, clip: torch.Tensor) -> float:
        """Single-clip logit."""
        if clip.dim() != 4:
            raise ShapeError("expected a single [3, L, H, W] clip")
        return float(self(clip.unsqueeze(0))[0])

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "discriminator",
            "width": self.width,
            "units": self.unit_count,
        }
        if extra_meta:
            meta.update(extra_meta)
        return save_checkpoint(path, meta, dict(self.state_dict()))

    @classmethod
    def from_checkpoint(cls, path) -> "VideoDiscriminator":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "discriminator":
            raise CheckpointError(
                f"{path} holds {meta.get('kind')!r}, not a discriminator"
            )
        disc = cls(width=meta["width"], units=meta["units"])
        disc.load_state_dict(tensors)
        return disc
