"""Distortion battery applied to watermarked clips.

Temporal attacks and Gaussian noise are pure tensor functions of
(input, parameters, seed) and keep autograd intact; real codec
compression shells out to an external encoder binary and is therefore
neither differentiable nor guaranteed deterministic.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .errors import (
    EncoderFailedError,
    EncoderMissingError,
    FrameCountMismatchError,
    ShapeError,
)
from .media import _load_frame_dir, check_video, save_clip

ENCODER_ENV_VAR = "FLOWMARK_ENCODER"
SCRATCH_ENV_VAR = "FLOWMARK_SCRATCH"

ATTACK_KINDS = (
    "identity",
    "frame_average",
    "frame_drop",
    "frame_swap",
    "gaussian",
    "h264",
    "hevc",
)

_PARAM_TYPES = {"n": int, "p": float, "std": float, "qp": int, "crf": int,
                "seed": int}


@dataclass(frozen=True)
class AttackSpec:
    """One attack with its parameters; `seed` feeds stochastic kinds."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        p = self.params
        if self.kind == "frame_average":
            n = p.get("n", 3)
            if n < 1 or n % 2 == 0:
                raise ValueError(f"window n must be odd and >= 1, got {n}")
        elif self.kind in ("frame_drop", "frame_swap"):
            prob = p.get("p", 0.5)
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"probability must be in [0, 1], got {prob}")
        elif self.kind == "gaussian":
            std = p.get("std", 0.04)
            if std < 0:
                raise ValueError(f"std must be >= 0, got {std}")
        elif self.kind == "h264":
            crf = p.get("crf", 22)
            if not 0 <= crf <= 51:
                raise ValueError(f"crf must be in [0, 51], got {crf}")
        elif self.kind == "hevc":
            qp = p.get("qp", 22)
            if not 0 <= qp <= 51:
                raise ValueError(f"qp must be in [0, 51], got {qp}")

    def __str__(self) -> str:
        parts = [f"{k}={v}" for k, v in sorted(self.params.items())]
        if self.seed:
            parts.append(f"seed={self.seed}")
        return self.kind + (":" + ",".join(parts) if parts else "")


def parse_attack_spec(text: str) -> AttackSpec:
    """Parse CLI syntax like `hevc:qp=22` or `gaussian:std=0.04,seed=7`."""
    kind, _, rest = text.strip().partition(":")
    params = {}
    seed = 0
    if rest:
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in _PARAM_TYPES:
                raise ValueError(f"bad attack parameter {item!r} in {text!r}")
            try:
                parsed = _PARAM_TYPES[key](value.strip())
            except ValueError as exc:
                raise ValueError(f"bad value in {item!r}: {exc}") from exc
            if key == "seed":
                seed = parsed
            else:
                params[key] = parsed
    return AttackSpec(kind=kind, params=params, seed=seed)


# --- temporal and noise attacks --------------------------------------------


def _reflect_index(i: int, length: int) -> int:
    if length == 1:
        return 0
    period = 2 * length - 2
    i = abs(i) % period
    return i if i < length else period - i


def frame_average(video: torch.Tensor, n: int) -> torch.Tensor:
    """Mean over a centered window of n frames, reflect-padded."""
    check_video(video)
    length = video.shape[1]
    if n < 1 or n % 2 == 0:
        raise ShapeError(f"window n must be odd and >= 1, got {n}")
    if n > 2 * length - 1:
        raise ShapeError(f"window n={n} too wide for {length} frames")
    if n == 1:
        return video.clone()
    half = n // 2
    index = torch.tensor(
        [
            [_reflect_index(t + o, length) for o in range(-half, half + 1)]
            for t in range(length)
        ]
    )
    return video[:, index].mean(dim=2)


def frame_drop(video: torch.Tensor, p: float, seed: int = 0) -> torch.Tensor:
    """Drop frames independently; a dropped frame repeats its
    nearest earlier kept frame. Frame 0 is never dropped, so length
    is preserved."""
    check_video(video)
    if not 0.0 <= p <= 1.0:
        raise ShapeError(f"p must be in [0, 1], got {p}")
    length = video.shape[1]
    gen = torch.Generator().manual_seed(seed)
    dropped = torch.rand(length, generator=gen) < p
    index = []
    last_kept = 0
    for t in range(length):
        if t > 0 and bool(dropped[t]):
            index.append(last_kept)
        else:
            index.append(t)
            last_kept = t
    return video[:, torch.tensor(index)]


def frame_swap(video: torch.Tensor, p: float, seed: int = 0) -> torch.Tensor:
    """Swap each non-overlapping adjacent pair (2k, 2k+1) with prob p."""
    check_video(video)
    if not 0.0 <= p <= 1.0:
        raise ShapeError(f"p must be in [0, 1], got {p}")
    length = video.shape[1]
    gen = torch.Generator().manual_seed(seed)
    index = list(range(length))
    for k in range(length // 2):
        if bool(torch.rand(1, generator=gen) < p):
            index[2 * k], index[2 * k + 1] = index[2 * k + 1], index[2 * k]
    return video[:, torch.tensor(index)]


def gaussian_noise(video: torch.Tensor, std: float, seed: int = 0) -> torch.Tensor:
    """Add i.i.d. zero-mean noise in normalized units, clamp to [-1, 1]."""
    check_video(video)
    if std < 0:
        raise ShapeError(f"std must be >= 0, got {std}")
    if std == 0:
        return video.clone()
    gen = torch.Generator().manual_seed(seed)
    noise = torch.randn(video.shape, generator=gen) * std
    return (video + noise).clamp(-1.0, 1.0)


# --- real codec round trip --------------------------------------------------


def find_encoder(encoder_path: str | None = None) -> str | None:
    """Locate the encoder binary: explicit path, env var, then PATH."""
    for candidate in (encoder_path, os.environ.get(ENCODER_ENV_VAR)):
        if candidate and Path(candidate).exists():
            return str(candidate)
    return shutil.which("ffmpeg")


def encoder_available(encoder_path: str | None = None) -> bool:
    return find_encoder(encoder_path) is not None


def _run_encoder(binary: str, args: list, cwd: Path):
    proc = subprocess.run(
        [binary, "-y", "-hide_banner", "-loglevel", "error", *args],
        cwd=cwd,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    if proc.returncode != 0:
        raise EncoderFailedError(
            f"encoder exited with {proc.returncode}: {proc.stderr.strip()[-500:]}"
        )


def codec_compress(
    video: torch.Tensor,
    codec: str,
    quality: int,
    encoder_path: str | None = None,
    scratch_dir: str | None = None,
) -> torch.Tensor:
    """Round-trip a clip through a real encoder at fixed quality.

    Writes lossless frames, encodes all-intra with B-frames disabled
    (so decoded frame order matches input), decodes, and re-ingests.
    h264 uses constant CRF, hevc constant QP.
    """
    check_video(video)
    if codec not in ("h264", "hevc"):
        raise ValueError(f"codec must be h264 or hevc, got {codec!r}")
    binary = find_encoder(encoder_path)
    if binary is None:
        raise EncoderMissingError(
            "no encoder binary found (set encoder_path, "
            f"${ENCODER_ENV_VAR}, or install ffmpeg)"
        )
    scratch = os.environ.get(SCRATCH_ENV_VAR) or scratch_dir or None
    workdir = Path(tempfile.mkdtemp(prefix="flowmark_codec_", dir=scratch))
    try:
        in_dir = workdir / "in"
        out_dir = workdir / "out"
        out_dir.mkdir()
        save_clip(in_dir, video)
        if codec == "h264":
            codec_args = ["-c:v", "libx264", "-crf", str(quality),
                          "-g", "1", "-bf", "0"]
        else:
            codec_args = [
                "-c:v", "libx265",
                "-x265-params",
                f"qp={quality}:keyint=1:min-keyint=1:bframes=0:log-level=0",
            ]
        stream = workdir / "clip.mp4"
        _run_encoder(
            binary,
            ["-framerate", "25", "-i", str(in_dir / "%05d.png"),
             *codec_args, "-pix_fmt", "yuv420p", str(stream)],
            workdir,
        )
        _run_encoder(
            binary,
            ["-i", str(stream), str(out_dir / "%05d.png")],
            workdir,
        )
        decoded = _load_frame_dir(out_dir)
        if decoded.shape != video.shape:
            raise FrameCountMismatchError(
                f"decoded shape {tuple(decoded.shape)} != "
                f"input shape {tuple(video.shape)}"
            )
        return decoded
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def apply_attack(
    video: torch.Tensor,
    spec: AttackSpec,
    encoder_path: str | None = None,
    scratch_dir: str | None = None,
) -> torch.Tensor:
    """Dispatch one AttackSpec against a clip."""
    if spec.kind == "identity":
        return video.clone()
    if spec.kind == "frame_average":
        return frame_average(video, spec.params.get("n", 3))
    if spec.kind == "frame_drop":
        return frame_drop(video, spec.params.get("p", 0.5), spec.seed)
    if spec.kind == "frame_swap":
        return frame_swap(video, spec.params.get("p", 0.5), spec.seed)
    if spec.kind == "gaussian":
        return gaussian_noise(video, spec.params.get("std", 0.04), spec.seed)
    if spec.kind == "h264":
        return codec_compress(
            video, "h264", spec.params.get("crf", 22), encoder_path, scratch_dir
        )
    if spec.kind == "hevc":
        return codec_compress(
            video, "hevc", spec.params.get("qp", 22), encoder_path, scratch_dir
        )
    raise ValueError(f"unknown attack kind {spec.kind!r}")
