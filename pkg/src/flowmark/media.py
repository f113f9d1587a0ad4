"""Shared media types: clips, messages, pixel normalization, and ingestion.

A video clip is a float32 tensor of shape [3, L, H, W] with values in
[-1, 1] (8-bit pixels map through p -> 2p/255 - 1). A message is a bit
sequence plus its +-1 tensor encoding laid out on a square template.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptFrameError,
    ShapeError,
    TooFewFramesError,
    UnreadableSourceError,
)

#: Peak-to-peak range of normalized pixel values, used by PSNR.
PIXEL_RANGE = 2.0

LOSSLESS_EXTENSIONS = {".png", ".bmp", ".ppm", ".pgm", ".tif", ".tiff"}

RAW_HEADER_SUFFIX = ".hdr"


def normalize_pixels(pixels) -> torch.Tensor:
    """Map 8-bit pixel values [0, 255] to float32 in [-1, 1]."""
    arr = np.asarray(pixels, dtype=np.float32)
    return torch.from_numpy(arr * (2.0 / 255.0) - 1.0)


def denormalize_pixels(video: torch.Tensor) -> np.ndarray:
    """Map [-1, 1] floats back to uint8, rounding to the nearest level."""
    arr = video.detach().cpu().numpy()
    levels = np.rint((arr + 1.0) * (255.0 / 2.0))
    return np.clip(levels, 0, 255).astype(np.uint8)


def check_video(video: torch.Tensor, name: str = "video") -> torch.Tensor:
    """Validate the [3, L, H, W] clip contract; returns the tensor."""
    if not isinstance(video, torch.Tensor) or video.dim() != 4:
        raise ShapeError(f"{name} must be a [3, L, H, W] tensor")
    if video.shape[0] != 3 or min(video.shape) < 1:
        raise ShapeError(f"{name} has invalid shape {tuple(video.shape)}")
    if not torch.isfinite(video).all():
        raise ShapeError(f"{name} contains non-finite values")
    return video


# --- message templates and packing -----------------------------------------


@dataclass(frozen=True)
class MessageTemplate:
    """Spatial layout of a payload: `side` x `side` map, square or not.

    Square templates hold exactly side**2 bits row-major. Irregular
    payloads keep their natural length and rely on learned linear maps
    (inside the codec) to reach the square template.
    """

    bit_count: int
    side: int
    kind: str  # "square" | "irregular"

    def __post_init__(self):
        if self.bit_count < 1 or self.side < 1:
            raise ValueError("bit_count and side must be positive")
        if self.kind not in ("square", "irregular"):
            raise ValueError(f"unknown template kind {self.kind!r}")
        if self.kind == "square" and self.side * self.side != self.bit_count:
            raise ValueError(
                f"square template needs side**2 == bit_count, "
                f"got {self.side}**2 != {self.bit_count}"
            )

    @classmethod
    def for_bits(cls, bit_count: int) -> "MessageTemplate":
        """Infer the template for a payload length.

        Perfect squares get a square template; anything else becomes
        irregular on a fixed 16x16 template (32x32 above 256 bits).
        """
        root = math.isqrt(bit_count)
        if root * root == bit_count:
            return cls(bit_count, root, "square")
        if bit_count <= 256:
            return cls(bit_count, 16, "irregular")
        if bit_count <= 1024:
            return cls(bit_count, 32, "irregular")
        raise ValueError(f"unsupported irregular payload of {bit_count} bits")


@dataclass(frozen=True)
class Message:
    """A payload: raw bits plus their +-1 tensor encoding."""

    bits: tuple
    template: MessageTemplate
    encoding: torch.Tensor


def pack_message(bits: Sequence[int], template: MessageTemplate) -> Message:
    """Encode bits as a +-1 float tensor on the template layout.

    Square templates are filled row-major into [1, S, S]; irregular
    payloads stay a flat [1, bit_count] vector (the codec owns the map
    onto the square template).
    """
    bits = tuple(int(b) for b in bits)
    if len(bits) != template.bit_count:
        raise ShapeError(
            f"expected {template.bit_count} bits, got {len(bits)}"
        )
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    values = torch.tensor(bits, dtype=torch.float32) * 2.0 - 1.0
    if template.kind == "square":
        encoding = values.reshape(1, template.side, template.side)
    else:
        encoding = values.reshape(1, template.bit_count)
    return Message(bits=bits, template=template, encoding=encoding)


def unpack_message(encoding: torch.Tensor, template: MessageTemplate) -> tuple:
    """Threshold an encoding back to bits: entry > 0 -> 1, else 0."""
    expected = (
        (1, template.side, template.side)
        if template.kind == "square"
        else (1, template.bit_count)
    )
    if tuple(encoding.shape) != expected:
        raise ShapeError(
            f"encoding shape {tuple(encoding.shape)} does not match "
            f"template (expected {expected})"
        )
    flat = encoding.detach().reshape(-1)
    return tuple(int(v) for v in (flat > 0).to(torch.int64).tolist())


def random_bits(count: int, seed: int) -> tuple:
    """Deterministic pseudo-random payload bits."""
    gen = torch.Generator().manual_seed(seed)
    return tuple(int(b) for b in torch.randint(0, 2, (count,), generator=gen))


# --- clip ingestion ---------------------------------------------------------


@dataclass(frozen=True)
class CropPolicy:
    """Random spatial crop plus a temporal window, seed-reproducible."""

    frames: int = 8
    height: int = 128
    width: int = 128


def _frame_paths(directory: Path) -> list:
    def numeric_key(p: Path):
        m = re.search(r"\d+", p.stem)
        return (int(m.group()) if m else 0, p.name)

    frames = sorted(
        (p for p in directory.iterdir()
         if p.suffix.lower() in LOSSLESS_EXTENSIONS),
        key=numeric_key,
    )
    return frames


def _load_frame_dir(directory: Path) -> torch.Tensor:
    paths = _frame_paths(directory)
    if not paths:
        raise UnreadableSourceError(f"no lossless frames in {directory}")
    frames = []
    size = None
    for p in paths:
        try:
            with Image.open(p) as img:
                rgb = np.asarray(img.convert("RGB"))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            raise CorruptFrameError(f"failed to decode {p}: {exc}") from exc
        if size is None:
            size = rgb.shape
        elif rgb.shape != size:
            raise CorruptFrameError(
                f"{p} has size {rgb.shape[:2]}, expected {size[:2]}"
            )
        frames.append(rgb)
    stacked = np.stack(frames)  # [L, H, W, 3]
    return normalize_pixels(stacked).permute(3, 0, 1, 2).contiguous()


def _parse_header(text: str) -> dict:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UnreadableSourceError(f"bad header line: {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    return fields


def _load_raw_planar(path: Path) -> torch.Tensor:
    header_path = path.with_name(path.name + RAW_HEADER_SUFFIX)
    if not header_path.exists():
        raise UnreadableSourceError(f"missing sidecar header {header_path}")
    fields = _parse_header(header_path.read_text())
    try:
        width = int(fields["width"])
        height = int(fields["height"])
        frames = int(fields["frames"])
        order = fields.get("channels", "rgb").lower()
    except (KeyError, ValueError) as exc:
        raise UnreadableSourceError(f"bad header {header_path}: {exc}") from exc
    if order not in ("rgb", "bgr"):
        raise UnreadableSourceError(f"unsupported channel order {order!r}")
    data = np.fromfile(path, dtype=np.uint8)
    expected = frames * 3 * height * width
    if data.size != expected:
        raise CorruptFrameError(
            f"{path} holds {data.size} bytes, header implies {expected}"
        )
    clip = data.reshape(frames, 3, height, width)
    if order == "bgr":
        clip = clip[:, ::-1]
    return normalize_pixels(clip).permute(1, 0, 2, 3).contiguous()


def read_clip(source) -> torch.Tensor:
    """Read a full clip from a frame directory or raw planar file."""
    path = Path(source)
    if path.is_dir():
        return _load_frame_dir(path)
    if path.is_file():
        return _load_raw_planar(path)
    raise UnreadableSourceError(f"no such clip source: {path}")


def crop_clip(clip: torch.Tensor, crop: CropPolicy, seed: int) -> torch.Tensor:
    """Apply the crop policy with offsets drawn from the seed."""
    _, length, height, width = clip.shape
    if length < crop.frames:
        raise TooFewFramesError(
            f"clip has {length} frames, policy needs {crop.frames}"
        )
    if height < crop.height or width < crop.width:
        raise ShapeError(
            f"clip {height}x{width} smaller than crop "
            f"{crop.height}x{crop.width}"
        )
    gen = torch.Generator().manual_seed(seed)
    t0 = int(torch.randint(0, length - crop.frames + 1, (1,), generator=gen))
    y0 = int(torch.randint(0, height - crop.height + 1, (1,), generator=gen))
    x0 = int(torch.randint(0, width - crop.width + 1, (1,), generator=gen))
    return clip[
        :, t0 : t0 + crop.frames, y0 : y0 + crop.height, x0 : x0 + crop.width
    ].contiguous()


def load_clip(source, crop: CropPolicy | None = None, seed: int = 0) -> torch.Tensor:
    """Read, normalize, and (optionally) crop a clip. Deterministic per seed."""
    clip = read_clip(source)
    if crop is not None:
        clip = crop_clip(clip, crop, seed)
    return check_video(clip)


def save_clip(directory, video: torch.Tensor) -> Path:
    """Write a clip as zero-padded PNG frames; returns the directory."""
    check_video(video)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = denormalize_pixels(video).transpose(1, 2, 3, 0)  # [L, H, W, 3]
    for idx, frame in enumerate(frames):
        Image.fromarray(frame, mode="RGB").save(directory / f"{idx:05d}.png")
    return directory


def save_raw_clip(path, video: torch.Tensor) -> Path:
    """Write a clip as a raw planar uint8 file plus its sidecar header."""
    check_video(video)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = denormalize_pixels(video).transpose(1, 0, 2, 3)  # [L, 3, H, W]
    frames.tofile(path)
    _, length, height, width = video.shape
    header = (
        f"width = {width}\nheight = {height}\n"
        f"frames = {length}\nchannels = rgb\n"
    )
    path.with_name(path.name + RAW_HEADER_SUFFIX).write_text(header)
    return path


class ClipDataset:
    """Fixed list of clip sources cropped reproducibly under one seed.

    Iteration order and every crop offset derive from (seed, index), so
    two runs over the same sources yield byte-identical clip sequences.
    """

    def __init__(self, sources: Sequence, crop: CropPolicy, seed: int = 0):
        self.sources = [Path(s) for s in sources]
        self.crop = crop
        self.seed = seed

    def __len__(self) -> int:
        return len(self.sources)

    def clip(self, index: int) -> torch.Tensor:
        source = self.sources[index % len(self.sources)]
        return load_clip(source, self.crop, seed=self.seed * 100003 + index)

    def __iter__(self) -> Iterator[torch.Tensor]:
        for i in range(len(self.sources)):
            yield self.clip(i)


class TensorClipDataset:
    """In-memory dataset of pre-cropped clips (synthetic or cached)."""

    def __init__(self, clips: Sequence[torch.Tensor]):
        self.clips = [check_video(c) for c in clips]

    def __len__(self) -> int:
        return len(self.clips)

    def clip(self, index: int) -> torch.Tensor:
        return self.clips[index % len(self.clips)]

    def __iter__(self) -> Iterator[torch.Tensor]:
        return iter(self.clips)


def synthetic_clip(
    seed: int, frames: int = 8, height: int = 32, width: int = 32
) -> torch.Tensor:
    """Deterministic smooth moving-pattern clip in [-1, 1].

    A handful of drifting sinusoidal plaids plus a moving bright blob;
    enough spatial and temporal structure to make watermark training
    non-trivial without any external data.
    """
    gen = torch.Generator().manual_seed(seed)
    ys = torch.linspace(-1.0, 1.0, height).view(1, height, 1)
    xs = torch.linspace(-1.0, 1.0, width).view(1, 1, width)
    ts = torch.arange(frames, dtype=torch.float32).view(frames, 1, 1)
    clip = torch.zeros(3, frames, height, width)
    for channel in range(3):
        acc = torch.zeros(frames, height, width)
        for _ in range(3):
            fy, fx = (torch.rand(2, generator=gen) * 4.0 + 1.0).tolist()
            vy, vx = ((torch.rand(2, generator=gen) - 0.5) * 0.4).tolist()
            phase = float(torch.rand(1, generator=gen)) * 6.28318
            acc = acc + torch.sin(
                fy * (ys + vy * ts) + fx * (xs + vx * ts) + phase
            )
        # moving gaussian blob
        cy0, cx0 = ((torch.rand(2, generator=gen) - 0.5) * 1.2).tolist()
        vy, vx = ((torch.rand(2, generator=gen) - 0.5) * 0.2).tolist()
        blob = torch.exp(
            -(((ys - cy0 - vy * ts) ** 2) + ((xs - cx0 - vx * ts) ** 2)) / 0.08
        )
        acc = acc / 3.0 + blob
        clip[channel] = acc
    clip = clip / clip.abs().amax().clamp(min=1.0)
    return clip.clamp(-1.0, 1.0).contiguous()


def synthetic_dataset(
    count: int, seed: int = 0, frames: int = 8, height: int = 32, width: int = 32
) -> TensorClipDataset:
    clips = [
        synthetic_clip(seed * 7919 + i, frames, height, width)
        for i in range(count)
    ]
    return TensorClipDataset(clips)
