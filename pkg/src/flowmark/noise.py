"""Learned, invertible stand-in for real video-codec compression.

A stack of coupling blocks acts on the Haar bands of each frame: the
low band accumulates additive perturbations driven by the high bands,
the high bands get a bounded affine update driven by the low band
(compression mostly reshapes high-frequency content). Running the
stack forward imitates an encoder round trip; running it backward
undoes its own distortion. After pretraining against a real encoder
the parameters are frozen and the module becomes a fixed,
differentiable channel for watermark training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .dwt import WaveletPair, dwt, idwt
from .errors import CheckpointError, NumericalError, ShapeError, TrainingError


def _zero_init(conv: nn.Module) -> nn.Module:
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class BandNet(nn.Module):
    """Two 3x3 convolutions over one wavelet band (3 channels)."""

    def __init__(self, hidden: int = 16, zero_last: bool = True):
        super().__init__()
        self.conv1 = nn.Conv2d(3, hidden, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 3, kernel_size=3, padding=1)
        if zero_last:
            _zero_init(self.conv2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(x)))


class BandCouplingBlock(nn.Module):
    """One invertible block over (low band, three high bands).

    Forward:  l' = l + eta(concat_j F(h_j))
              h_j' = h_j * exp(2*sigmoid(H(l')) - 1) + G(l')
    Backward inverts in the opposite order with the same parameters.
    The scale stays inside (e**-1, e**1) by construction.
    """

    def __init__(self, hidden: int = 16):
        super().__init__()
        self.feature = BandNet(hidden, zero_last=False)
        self.merge = _zero_init(nn.Conv2d(9, 3, kernel_size=3, padding=1))
        self.scale = BandNet(hidden)
        self.shift = BandNet(hidden)

    def _low_update(self, highs) -> torch.Tensor:
        return self.merge(torch.cat([self.feature(h) for h in highs], dim=1))

    def _log_scale(self, low: torch.Tensor) -> torch.Tensor:
        return 2.0 * torch.sigmoid(self.scale(low)) - 1.0

    def forward(self, low, highs, index: int = 0):
        low_next = low + self._low_update(highs)
        gain = torch.exp(self._log_scale(low_next))
        shift = self.shift(low_next)
        highs_next = tuple(h * gain + shift for h in highs)
        if not (
            torch.isfinite(low_next).all()
            and all(torch.isfinite(h).all() for h in highs_next)
        ):
            raise NumericalError(f"non-finite bands in block {index} forward")
        return low_next, highs_next

    def backward(self, low, highs, index: int = 0):
        gain = torch.exp(-self._log_scale(low))
        shift = self.shift(low)
        highs_prev = tuple((h - shift) * gain for h in highs)
        low_prev = low - self._low_update(highs_prev)
        if not (
            torch.isfinite(low_prev).all()
            and all(torch.isfinite(h).all() for h in highs_prev)
        ):
            raise NumericalError(f"non-finite bands in block {index} backward")
        return low_prev, highs_prev


def _fold(video: torch.Tensor):
    """[B, 3, L, H, W] -> [B*L, 3, H, W] plus the shape to unfold."""
    b, c, length, h, w = video.shape
    folded = video.permute(0, 2, 1, 3, 4).reshape(b * length, c, h, w)
    return folded, (b, length)


def _unfold(folded: torch.Tensor, shape) -> torch.Tensor:
    b, length = shape
    _, c, h, w = folded.shape
    return folded.reshape(b, length, c, h, w).permute(0, 2, 1, 3, 4)


class CompressionProxy(nn.Module):
    """The frozen-after-pretraining differentiable compression channel."""

    def __init__(self, blocks: int = 8, hidden: int = 16):
        super().__init__()
        self.hidden = hidden
        self.blocks = nn.ModuleList(
            BandCouplingBlock(hidden) for _ in range(blocks)
        )
        self.frozen = False

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def freeze_(self) -> "CompressionProxy":
        for param in self.parameters():
            param.requires_grad_(False)
        self.frozen = True
        return self

    def forward_bands(self, pair: WaveletPair) -> WaveletPair:
        low, highs = pair.ll, pair.highs
        for i, block in enumerate(self.blocks, start=1):
            low, highs = block(low, highs, index=i)
        return WaveletPair(ll=low, highs=highs)

    def backward_bands(self, pair: WaveletPair) -> WaveletPair:
        low, highs = pair.ll, pair.highs
        for i in range(len(self.blocks), 0, -1):
            low, highs = self.blocks[i - 1].backward(low, highs, index=i)
        return WaveletPair(ll=low, highs=highs)

    def _run(self, video: torch.Tensor, inverse: bool) -> torch.Tensor:
        single = video.dim() == 4
        batch = video.unsqueeze(0) if single else video
        if batch.dim() != 5 or batch.shape[1] != 3:
            raise ShapeError("expected a [3, L, H, W] clip or batch of them")
        folded, shape = _fold(batch)
        pair = dwt(folded)
        pair = self.backward_bands(pair) if inverse else self.forward_bands(pair)
        out = _unfold(idwt(pair), shape)
        return out.squeeze(0) if single else out

    def distort(self, video: torch.Tensor) -> torch.Tensor:
        """Simulated compression: DWT -> blocks forward -> IDWT."""
        return self._run(video, inverse=False)

    def restore(self, video: torch.Tensor) -> torch.Tensor:
        """Exact inverse pipeline of distort."""
        return self._run(video, inverse=True)

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "compression_proxy",
            "blocks": self.block_count,
            "hidden": self.hidden,
            "frozen": self.frozen,
        }
        if extra_meta:
            meta.update(extra_meta)
        return save_checkpoint(path, meta, dict(self.state_dict()))

    @classmethod
    def from_checkpoint(cls, path) -> "CompressionProxy":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "compression_proxy":
            raise CheckpointError(
                f"{path} holds {meta.get('kind')!r}, not a compression proxy"
            )
        proxy = cls(blocks=meta["blocks"], hidden=meta["hidden"])
        proxy.load_state_dict(tensors)
        if meta.get("frozen"):
            proxy.freeze_()
        return proxy


@dataclass(frozen=True)
class PretrainSettings:
    """Optimizer settings for proxy pretraining."""

    steps: int = 300
    batch_size: int = 4
    learning_rate: float = 1e-4
    betas: tuple = (0.5, 0.999)
    seed: int = 0
    blocks: int = 8
    hidden: int = 16


def pretrain_proxy(pairs, settings: PretrainSettings):
    """Fit a proxy to (original, encoder-compressed) clip pairs.

    Minimizes MSE(distort(original), compressed) plus
    MSE(restore(compressed), original), then freezes the result.
    Returns (frozen proxy, per-step loss history).
    """
    pairs = list(pairs)
    if not pairs:
        raise TrainingError("pretraining needs at least one clip pair")
    torch.manual_seed(settings.seed)
    proxy = CompressionProxy(blocks=settings.blocks, hidden=settings.hidden)
    optimizer = torch.optim.Adam(
        proxy.parameters(), lr=settings.learning_rate, betas=settings.betas
    )
    sampler = torch.Generator().manual_seed(settings.seed)
    history = []
    for _ in range(settings.steps):
        picks = torch.randint(
            0, len(pairs), (settings.batch_size,), generator=sampler
        )
        origin = torch.stack([pairs[i][0] for i in picks.tolist()])
        compressed = torch.stack([pairs[i][1] for i in picks.tolist()])
        loss = F.mse_loss(proxy.distort(origin), compressed) + F.mse_loss(
            proxy.restore(compressed), origin
        )
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite pretraining loss at step {len(history)}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss))
    proxy.freeze_()
    return proxy, history
