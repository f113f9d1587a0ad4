"""Single-level orthonormal 2D Haar transform, applied per frame.

The /2 normalization makes the transform orthonormal, so energy is
conserved exactly and the inverse is the adjoint. Both directions are
plain tensor arithmetic and therefore differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError


@dataclass(frozen=True)
class WaveletPair:
    """Low band plus the three high bands (LH, HL, HH) of one clip.

    Each band has half the spatial resolution of the source:
    [..., H/2, W/2] with the leading dims unchanged.
    """

    ll: torch.Tensor
    highs: tuple  # (lh, hl, hh)

    def __post_init__(self):
        for band in self.highs:
            if band.shape != self.ll.shape:
                raise ShapeError("wavelet bands must share one shape")
        if len(self.highs) != 3:
            raise ShapeError("expected exactly three high bands")


def dwt(video: torch.Tensor) -> WaveletPair:
    """Orthonormal Haar analysis over each 2x2 spatial block.

    With a, b the top row and c, d the bottom row of a block:
    ll = (a+b+c+d)/2, lh = (a-b+c-d)/2, hl = (a+b-c-d)/2, hh = (a-b-c+d)/2.
    """
    h, w = video.shape[-2], video.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even, got {h}x{w}")
    a = video[..., 0::2, 0::2]
    b = video[..., 0::2, 1::2]
    c = video[..., 1::2, 0::2]
    d = video[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return WaveletPair(ll=ll, highs=(lh, hl, hh))


def idwt(pair: WaveletPair) -> torch.Tensor:
    """Exact inverse of dwt (the adjoint of the orthonormal analysis)."""
    ll, (lh, hl, hh) = pair.ll, pair.highs
    a = (ll + lh + hl + hh) / 2
    b = (ll - lh + hl - hh) / 2
    c = (ll + lh - hl - hh) / 2
    d = (ll - lh - hl + hh) / 2
    half_h, half_w = ll.shape[-2], ll.shape[-1]
    lead = ll.shape[:-2]
    top = torch.stack((a, b), dim=-1).reshape(*lead, half_h, 2 * half_w)
    bottom = torch.stack((c, d), dim=-1).reshape(*lead, half_h, 2 * half_w)
    return torch.stack((top, bottom), dim=-2).reshape(
        *lead, 2 * half_h, 2 * half_w
    )
