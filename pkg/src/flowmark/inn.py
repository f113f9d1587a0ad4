"""Invertible watermark codec: one parameter set, two directions.

A stack of additive/affine coupling blocks moves information between a
video branch [B, 3, L, H, W] and a message branch [B, 1, S, S]. Running
the stack forward embeds a message and also yields the residual needed
for exact inversion; running it backward with an all-zero residual is
the blind extractor. Both directions evaluate the same subnets, so the
embedder and extractor cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, NumericalError, ShapeError
from .media import Message, MessageTemplate, pack_message, unpack_message

#: Bound on the log-scale produced by the scale subnet, so both
#: directions stay finite for any parameters. Kept at 1.0: a wider band
#: lets blind extraction drift into a runaway-amplification regime
#: (e**(2*blocks) dynamic range) where training collapses.
SCALE_LOG_BOUND = 1.0


def _zero_init(conv: nn.Module) -> nn.Module:
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class MessageToVideo(nn.Module):
    """Upsampling subnet: message map -> video-shaped residual.

    Nearest-neighbor upsample to the clip's spatial size, two 3x3
    convolutions, then a temporal broadcast (one watermark pattern
    covers every frame). The final convolution starts at zero so a
    fresh codec is the identity on the cover.
    """

    def __init__(self, hidden: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(1, hidden, kernel_size=3, padding=1)
        self.conv2 = _zero_init(nn.Conv2d(hidden, 3, kernel_size=3, padding=1))

    def forward(self, message: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        _, _, frames, height, width = like.shape
        up = F.interpolate(message, size=(height, width), mode="nearest")
        residual = self.conv2(F.relu(self.conv1(up)))
        return residual.unsqueeze(2).expand(-1, -1, frames, -1, -1)


class VideoToMessage(nn.Module):
    """Downsampling subnet: video branch -> message-shaped map.

    Temporal mean, one 3x3 convolution at full resolution, strided-
    average pooling to the template side, then a second 3x3
    convolution. Convolving before the pool lets the net build local
    high-pass features, so smooth cover content collapses under the
    pool while cell-scale watermark structure survives; pooling first
    would force the embedder to spend amplitude cancelling pooled
    cover content. With `bounded` the output is squashed to
    [-SCALE_LOG_BOUND, SCALE_LOG_BOUND] for use as a log-scale. Final
    convolution starts at zero.
    """

    def __init__(self, side: int, hidden: int = 32, bounded: bool = False):
        super().__init__()
        self.side = side
        self.bounded = bounded
        self.conv1 = nn.Conv2d(3, hidden, kernel_size=3, padding=1)
        self.conv2 = _zero_init(nn.Conv2d(hidden, 1, kernel_size=3, padding=1))

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        features = F.relu(self.conv1(video.mean(dim=2)))
        pooled = F.adaptive_avg_pool2d(features, (self.side, self.side))
        out = self.conv2(pooled)
        if self.bounded:
            out = SCALE_LOG_BOUND * torch.tanh(out)
        return out


class CouplingBlock(nn.Module):
    """One invertible block over the (video, message) state.

    Forward:  x_c' = x_c + U(x_m)
              x_m' = x_m * exp(D1(x_c')) + D2(x_c')
    Backward: z'   = (z - D2(x)) * exp(-D1(x))
              x'   = x - U(z')
    Custom subnets may be injected for testing; defaults follow the
    shapes above.
    """

    def __init__(
        self,
        side: int,
        hidden: int = 32,
        up_net: nn.Module | None = None,
        scale_net: nn.Module | None = None,
        shift_net: nn.Module | None = None,
    ):
        super().__init__()
        self.up = up_net if up_net is not None else MessageToVideo(hidden)
        self.scale = (
            scale_net
            if scale_net is not None
            else VideoToMessage(side, hidden, bounded=True)
        )
        self.shift = (
            shift_net
            if shift_net is not None
            else VideoToMessage(side, hidden, bounded=False)
        )

    def forward(self, x_c, x_m, index: int = 0):
        x_c_next = x_c + self.up(x_m, like=x_c)
        x_m_next = x_m * torch.exp(self.scale(x_c_next)) + self.shift(x_c_next)
        if not (
            torch.isfinite(x_c_next).all() and torch.isfinite(x_m_next).all()
        ):
            raise NumericalError(f"non-finite state in block {index} forward")
        return x_c_next, x_m_next

    def backward(self, x, z, index: int = 0):
        z_prev = (z - self.shift(x)) * torch.exp(-self.scale(x))
        x_prev = x - self.up(z_prev, like=x)
        if not (torch.isfinite(x_prev).all() and torch.isfinite(z_prev).all()):
            raise NumericalError(f"non-finite state in block {index} backward")
        return x_prev, z_prev


@dataclass(frozen=True)
class EmbedResult:
    """Watermarked clip plus the residual left on the message branch."""

    watermarked: torch.Tensor
    residual: torch.Tensor


class WatermarkCodec(nn.Module):
    """The shared-parameter embedder/extractor.

    Square templates feed the +-1 encoding straight into the blocks;
    irregular payloads pass through learned (unshared) linear maps onto
    and back off the square template.
    """

    def __init__(
        self, template: MessageTemplate, blocks: int = 16, hidden: int = 32
    ):
        super().__init__()
        self.template = template
        self.hidden = hidden
        self.blocks = nn.ModuleList(
            CouplingBlock(template.side, hidden) for _ in range(blocks)
        )
        if template.kind == "irregular":
            size = template.side * template.side
            self.bits_to_template = nn.Linear(template.bit_count, size)
            self.template_to_bits = nn.Linear(size, template.bit_count)
        else:
            self.bits_to_template = None
            self.template_to_bits = None

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # --- template-space passes (used directly by invertibility tests) ---

    def forward_blocks(self, x_c, x_m):
        """Run every block forward; returns (stego video, residual)."""
        for i, block in enumerate(self.blocks, start=1):
            x_c, x_m = block(x_c, x_m, index=i)
        return x_c, x_m

    def backward_blocks(self, x, z):
        """Run every block backward with the same parameters."""
        for i in range(len(self.blocks), 0, -1):
            x, z = self.blocks[i - 1].backward(x, z, index=i)
        return x, z

    # --- message-space batch passes -------------------------------------

    def _to_template(self, encoding: torch.Tensor) -> torch.Tensor:
        if self.template.kind == "square":
            return encoding
        flat = self.bits_to_template(encoding.reshape(encoding.shape[0], -1))
        return flat.view(-1, 1, self.template.side, self.template.side)

    def _from_template(self, x_m: torch.Tensor) -> torch.Tensor:
        if self.template.kind == "square":
            return x_m
        flat = self.template_to_bits(x_m.reshape(x_m.shape[0], -1))
        return flat.view(-1, 1, self.template.bit_count)

    def encode_batch(self, cover: torch.Tensor, encoding: torch.Tensor):
        """Embed a batch: [B,3,L,H,W] x encodings -> (stego, residual)."""
        if cover.dim() != 5 or cover.shape[1] != 3:
            raise ShapeError("cover batch must be [B, 3, L, H, W]")
        x_m = self._to_template(encoding)
        return self.forward_blocks(cover, x_m)

    def decode_batch(self, video: torch.Tensor) -> torch.Tensor:
        """Blind batch extraction to pre-threshold message encodings."""
        if video.dim() != 5 or video.shape[1] != 3:
            raise ShapeError("video batch must be [B, 3, L, H, W]")
        zeros = video.new_zeros(
            video.shape[0], 1, self.template.side, self.template.side
        )
        _, z1 = self.backward_blocks(video, zeros)
        return self._from_template(z1)

    # --- single-clip public operations -----------------------------------

    def embed(self, cover: torch.Tensor, message: Message) -> EmbedResult:
        """Embed one message into one clip."""
        if message.template != self.template:
            raise ConfigError(
                f"message template {message.template} does not match "
                f"codec template {self.template}"
            )
        if cover.dim() != 4 or cover.shape[0] != 3:
            raise ShapeError("cover must be a [3, L, H, W] clip")
        stego, residual = self.encode_batch(
            cover.unsqueeze(0), message.encoding.unsqueeze(0)
        )
        return EmbedResult(
            watermarked=stego.squeeze(0), residual=residual.squeeze(0)
        )

    def extract(self, distorted: torch.Tensor) -> Message:
        """Blind extraction: no cover, no residual, just the clip."""
        if distorted.dim() != 4 or distorted.shape[0] != 3:
            raise ShapeError("clip must be [3, L, H, W]")
        encoding = self.decode_batch(distorted.unsqueeze(0)).squeeze(0)
        bits = unpack_message(encoding, self.template)
        return pack_message(bits, self.template)

    def extract_encoding(self, distorted: torch.Tensor) -> torch.Tensor:
        """Pre-threshold extraction output (what the message loss sees)."""
        if distorted.dim() != 4 or distorted.shape[0] != 3:
            raise ShapeError("clip must be [3, L, H, W]")
        return self.decode_batch(distorted.unsqueeze(0)).squeeze(0)

    # --- persistence ------------------------------------------------------

    def randomize_(self, generator: torch.Generator, std: float = 0.1):
        """Fill every parameter with N(0, std) draws (testing aid)."""
        with torch.no_grad():
            for param in self.parameters():
                param.copy_(
                    torch.randn(param.shape, generator=generator) * std
                )
        return self

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "watermark_codec",
            "blocks": self.block_count,
            "hidden": self.hidden,
            "template": {
                "bit_count": self.template.bit_count,
                "side": self.template.side,
                "kind": self.template.kind,
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        return save_checkpoint(path, meta, dict(self.state_dict()))

    @classmethod
    def from_checkpoint(cls, path) -> "WatermarkCodec":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "watermark_codec":
            raise CheckpointError(
                f"{path} holds {meta.get('kind')!r}, not a watermark codec"
            )
        template = MessageTemplate(**meta["template"])
        codec = cls(template, blocks=meta["blocks"], hidden=meta["hidden"])
        codec.load_state_dict(tensors)
        return codec
