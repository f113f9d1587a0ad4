"""Loss computation and the two-stage watermark training loop.

Stage 1 fits the codec alone (no adversarial term); stage 2 adds the
discriminator with a small weight, alternating one critic step with one
codec step, and decays the codec learning rate by 0.5 every 20 epochs.
Every random draw comes from a single checkpointed generator, so a run
is resumable and its metric log replayable from the seed.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .attacks import frame_average, frame_drop, frame_swap, gaussian_noise
from .checkpoint import load_checkpoint, save_checkpoint
from .discriminator import VideoDiscriminator
from .errors import CheckpointError, ConfigError, TrainingError
from .evaluation import psnr
from .inn import WatermarkCodec
from .media import MessageTemplate
from .noise import CompressionProxy

DEFAULT_CHANNELS = (
    "identity",
    "frame_average",
    "frame_drop",
    "frame_swap",
    "gaussian",
    "proxy",
)


class StageWeights(NamedTuple):
    video: float
    message: float
    adversarial: float


@dataclass(frozen=True)
class LossBundle:
    """The three loss terms and their weighted sum, as torch scalars."""

    video_loss: torch.Tensor
    message_loss: torch.Tensor
    dis_loss: torch.Tensor
    total: torch.Tensor


def weighted_total(video, message, dis, weights: StageWeights):
    return (
        weights.video * video
        + weights.message * message
        + weights.adversarial * dis
    )


def compute_losses(
    cover: torch.Tensor,
    watermarked: torch.Tensor,
    message_in: torch.Tensor,
    message_out: torch.Tensor,
    disc_logit: torch.Tensor | None,
    weights: StageWeights,
) -> LossBundle:
    """Video MSE + message MSE (pre-threshold) + realness BCE, weighted.

    `disc_logit` may be None whenever the adversarial weight is zero.
    """
    for name, tensor in (("cover", cover), ("watermarked", watermarked),
                         ("message_in", message_in),
                         ("message_out", message_out)):
        if not torch.isfinite(tensor).all():
            raise TrainingError(f"non-finite {name} fed to loss computation")
    video = F.mse_loss(watermarked, cover)
    message = F.mse_loss(message_out, message_in)
    if disc_logit is None:
        if weights.adversarial != 0.0:
            raise ConfigError("adversarial weight set but no critic logit")
        dis = video.new_zeros(())
    else:
        dis = F.binary_cross_entropy_with_logits(
            disc_logit, torch.ones_like(disc_logit)
        )
    total = weighted_total(video, message, dis, weights)
    if not torch.isfinite(total):
        raise TrainingError("non-finite training loss")
    return LossBundle(video, message, dis, total)


@dataclass(frozen=True)
class TrainSchedule:
    """Two-stage hyperparameters plus optimizer and logging settings."""

    stage1_steps: int = 900
    stage2_steps: int = 0
    stage1_weights: StageWeights = StageWeights(1.0, 10.0, 0.0)
    stage2_weights: StageWeights = StageWeights(1.0, 2.0, 0.0001)
    learning_rate: float = 1e-4
    betas: tuple = (0.5, 0.999)
    decay_factor: float = 0.5
    decay_every_epochs: int = 20
    steps_per_epoch: int = 100
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 500
    channels: tuple = DEFAULT_CHANNELS

    def __post_init__(self):
        if self.stage1_weights.adversarial != 0.0:
            raise ConfigError("stage 1 must run without the adversarial term")
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ConfigError("stage lengths must be non-negative")
        unknown = set(self.channels) - set(DEFAULT_CHANNELS)
        if unknown:
            raise ConfigError(f"unknown training channels: {sorted(unknown)}")

    @property
    def total_steps(self) -> int:
        return self.stage1_steps + self.stage2_steps


@dataclass(frozen=True)
class MetricRow:
    step: int
    stage: int
    video_loss: float
    message_loss: float
    dis_loss: float
    total_loss: float
    acc: float
    psnr_db: float


METRIC_FIELDS = tuple(MetricRow.__dataclass_fields__)


@dataclass
class TrainResult:
    metrics: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    final_checkpoint: Path | None = None


def _encode_bits_batch(bits: torch.Tensor, template: MessageTemplate):
    values = bits.to(torch.float32) * 2.0 - 1.0
    if template.kind == "square":
        return values.view(-1, 1, template.side, template.side)
    return values.view(-1, 1, template.bit_count)


def _apply_channel(
    name: str, batch: torch.Tensor, proxy: CompressionProxy | None, seed: int
) -> torch.Tensor:
    if name == "identity":
        return batch
    if name == "proxy":
        return proxy.distort(batch)
    clips = []
    for i in range(batch.shape[0]):
        clip = batch[i]
        if name == "frame_average":
            clips.append(frame_average(clip, 3))
        elif name == "frame_drop":
            clips.append(frame_drop(clip, 0.5, seed + i))
        elif name == "frame_swap":
            clips.append(frame_swap(clip, 0.5, seed + i))
        elif name == "gaussian":
            clips.append(gaussian_noise(clip, 0.04, seed + i))
        else:
            raise ConfigError(f"unknown channel {name!r}")
    return torch.stack(clips)


def _batch_psnr(covers: torch.Tensor, stegos: torch.Tensor) -> float:
    values = [psnr(covers[i], stegos[i]) for i in range(covers.shape[0])]
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def _clean_accuracy(codec, stegos, bits) -> float:
    with torch.no_grad():
        decoded = codec.decode_batch(stegos.detach())
    predicted = (decoded.reshape(bits.shape[0], -1) > 0).to(bits.dtype)
    return 100.0 * float((predicted == bits).float().mean())


# --- training-state persistence ---------------------------------------------


def _pack_optimizer(prefix: str, optimizer, tensors: dict):
    for pid, stats in optimizer.state_dict()["state"].items():
        for key, value in stats.items():
            tensors[f"{prefix}.{pid}.{key}"] = (
                value if torch.is_tensor(value)
                else torch.tensor(float(value))
            )


def _unpack_optimizer(prefix: str, optimizer, tensors: dict):
    state = {}
    for name, value in tensors.items():
        if not name.startswith(prefix + "."):
            continue
        _, pid, key = name.split(".", 2)
        state.setdefault(int(pid), {})[key] = value
    base = optimizer.state_dict()
    base["state"] = state
    optimizer.load_state_dict(base)


def save_training_state(
    path, step: int, codec, disc, opt_codec, opt_disc, generator, schedule
):
    tensors = {f"codec.{k}": v for k, v in codec.state_dict().items()}
    if disc is not None:
        tensors.update({f"disc.{k}": v for k, v in disc.state_dict().items()})
        _pack_optimizer("optd", opt_disc, tensors)
    _pack_optimizer("optc", opt_codec, tensors)
    meta = {
        "kind": "training_state",
        "step": step,
        "seed": schedule.seed,
        "generator_state": generator.get_state().numpy().tobytes().hex(),
        "codec": {
            "blocks": codec.block_count,
            "hidden": codec.hidden,
            "template": {
                "bit_count": codec.template.bit_count,
                "side": codec.template.side,
                "kind": codec.template.kind,
            },
        },
        "disc": None if disc is None else {
            "width": disc.width, "units": disc.unit_count
        },
    }
    return save_checkpoint(path, meta, tensors)


def load_codec_from(path) -> WatermarkCodec:
    """Load a codec from either a codec or a training-state checkpoint."""
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") == "watermark_codec":
        return WatermarkCodec.from_checkpoint(path)
    if meta.get("kind") == "training_state":
        cfg = meta["codec"]
        codec = WatermarkCodec(
            MessageTemplate(**cfg["template"]),
            blocks=cfg["blocks"],
            hidden=cfg["hidden"],
        )
        codec.load_state_dict(
            {
                k[len("codec."):]: v
                for k, v in tensors.items()
                if k.startswith("codec.")
            }
        )
        return codec
    raise CheckpointError(f"{path} does not contain a codec ({meta.get('kind')!r})")


# --- the loop ----------------------------------------------------------------


def train(
    codec: WatermarkCodec,
    noise: CompressionProxy | None,
    disc: VideoDiscriminator | None,
    dataset,
    schedule: TrainSchedule,
    out_dir=None,
    resume_from=None,
) -> TrainResult:
    """Run the staged loop; returns metrics and checkpoint paths.

    The frozen proxy is never optimized; the discriminator is touched
    only in stage 2. With `resume_from`, training continues bit-exactly
    from a saved training state (same schedule and seed required).
    """
    if len(dataset) == 0:
        raise TrainingError("training dataset is empty")
    if "proxy" in schedule.channels:
        if noise is None:
            raise ConfigError("schedule samples the proxy channel but no "
                              "noise layer was provided")
        if not noise.frozen:
            raise ConfigError("noise layer must be pretrained and frozen")
    if schedule.stage2_steps > 0 and disc is None:
        raise ConfigError("stage 2 requires a discriminator")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    opt_codec = torch.optim.Adam(
        codec.parameters(), lr=schedule.learning_rate, betas=schedule.betas
    )
    opt_disc = (
        torch.optim.Adam(
            disc.parameters(), lr=schedule.learning_rate, betas=schedule.betas
        )
        if disc is not None
        else None
    )
    generator = torch.Generator().manual_seed(schedule.seed)
    start_step = 0
    if resume_from is not None:
        meta, tensors = load_checkpoint(resume_from)
        if meta.get("kind") != "training_state":
            raise CheckpointError(f"{resume_from} is not a training state")
        if meta["seed"] != schedule.seed:
            raise ConfigError("resume seed does not match the schedule seed")
        codec.load_state_dict(
            {k[6:]: v for k, v in tensors.items() if k.startswith("codec.")}
        )
        if disc is not None and meta.get("disc") is not None:
            disc.load_state_dict(
                {k[5:]: v for k, v in tensors.items() if k.startswith("disc.")}
            )
            _unpack_optimizer("optd", opt_disc, tensors)
        _unpack_optimizer("optc", opt_codec, tensors)
        generator.set_state(
            torch.tensor(
                list(bytes.fromhex(meta["generator_state"])), dtype=torch.uint8
            )
        )
        start_step = meta["step"]

    result = TrainResult()
    metrics_path = out_dir / "metrics.csv" if out_dir is not None else None
    metrics_file = None
    writer = None
    if metrics_path is not None:
        fresh = start_step == 0 or not metrics_path.exists()
        metrics_file = open(metrics_path, "w" if fresh else "a", newline="")
        writer = csv.writer(metrics_file)
        if fresh:
            writer.writerow(METRIC_FIELDS)

    last_good = None

    def snapshot():
        state = {
            "codec": copy.deepcopy(codec.state_dict()),
            "optc": copy.deepcopy(opt_codec.state_dict()),
            "gen": generator.get_state().clone(),
        }
        if disc is not None:
            state["disc"] = copy.deepcopy(disc.state_dict())
            state["optd"] = copy.deepcopy(opt_disc.state_dict())
        return state

    def emit_checkpoint(tag: str, step: int) -> Path | None:
        if out_dir is None:
            return None
        path = out_dir / f"{tag}.ckpt"
        save_training_state(
            path, step, codec, disc, opt_codec, opt_disc, generator, schedule
        )
        result.checkpoints.append(path)
        return path

    template = codec.template
    try:
        for step in range(start_step, schedule.total_steps):
            in_stage2 = step >= schedule.stage1_steps
            weights = (
                schedule.stage2_weights if in_stage2 else schedule.stage1_weights
            )
            # stage-2 learning-rate decay, derived from the step index so
            # resumed runs see the same value
            if in_stage2:
                epochs = (step - schedule.stage1_steps) // schedule.steps_per_epoch
                decays = epochs // schedule.decay_every_epochs
                lr = schedule.learning_rate * schedule.decay_factor**decays
                for group in opt_codec.param_groups:
                    group["lr"] = lr

            picks = torch.randint(
                0, len(dataset), (schedule.batch_size,), generator=generator
            )
            covers = torch.stack([dataset.clip(i) for i in picks.tolist()])
            bits = torch.randint(
                0, 2, (schedule.batch_size, template.bit_count),
                generator=generator,
            )
            channel_pick = int(
                torch.randint(0, len(schedule.channels), (1,), generator=generator)
            )
            channel_seed = int(
                torch.randint(0, 2**31 - 1, (1,), generator=generator)
            )
            channel = schedule.channels[channel_pick]

            encodings = _encode_bits_batch(bits, template)
            stegos, _ = codec.encode_batch(covers, encodings)
            distorted = _apply_channel(channel, stegos, noise, channel_seed)
            decoded = codec.decode_batch(distorted)

            logit = None
            if in_stage2:
                # one critic step on real-vs-watermarked, then the codec
                # step sees the updated critic
                opt_disc.zero_grad()
                critic_loss = F.binary_cross_entropy_with_logits(
                    disc(covers), torch.ones(covers.shape[0])
                ) + F.binary_cross_entropy_with_logits(
                    disc(stegos.detach()), torch.zeros(covers.shape[0])
                )
                critic_loss.backward()
                opt_disc.step()
                logit = disc(stegos)

            bundle = compute_losses(
                covers, stegos, encodings, decoded, logit, weights
            )
            opt_codec.zero_grad()
            bundle.total.backward()
            opt_codec.step()

            if not all(
                torch.isfinite(p).all() for p in codec.parameters()
            ):
                if last_good is not None and out_dir is not None:
                    codec.load_state_dict(last_good["codec"])
                    emit_checkpoint("last_good", step)
                raise TrainingError(f"parameters diverged at step {step}")
            last_good = snapshot()

            row = MetricRow(
                step=step + 1,
                stage=2 if in_stage2 else 1,
                video_loss=bundle.video_loss.item(),
                message_loss=bundle.message_loss.item(),
                dis_loss=bundle.dis_loss.item(),
                total_loss=bundle.total.item(),
                acc=_clean_accuracy(codec, stegos, bits),
                psnr_db=_batch_psnr(covers, stegos.detach()),
            )
            result.metrics.append(row)
            if writer is not None:
                writer.writerow([getattr(row, f) for f in METRIC_FIELDS])
                metrics_file.flush()

            done = step + 1
            if schedule.checkpoint_every and done % schedule.checkpoint_every == 0:
                emit_checkpoint(f"step_{done:06d}", done)
            if done == schedule.stage1_steps and schedule.stage2_steps > 0:
                emit_checkpoint("stage1_end", done)
        result.final_checkpoint = emit_checkpoint("final", schedule.total_steps)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return result
