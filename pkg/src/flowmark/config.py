"""Plain-text run configuration: `key = value` lines, flat keys.

A RunConfig plus the emitted checkpoints fully determine a run; the CLI
reads the file first and lets command-line flags override single keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .media import CropPolicy, MessageTemplate
from .training import DEFAULT_CHANNELS, StageWeights, TrainSchedule


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/run0"

    # data
    data_dir: str = ""
    synthetic_clips: int = 0
    clip_frames: int = 8
    clip_height: int = 128
    clip_width: int = 128

    # payload and architecture
    payload_bits: int = 96
    codec_blocks: int = 16
    codec_hidden: int = 32
    proxy_blocks: int = 8
    proxy_hidden: int = 16
    disc_width: int = 32

    # schedule
    stage1_steps: int = 900
    stage2_steps: int = 0
    stage1_video_weight: float = 1.0
    stage1_message_weight: float = 10.0
    stage2_video_weight: float = 1.0
    stage2_message_weight: float = 2.0
    stage2_adversarial_weight: float = 0.0001
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    decay_factor: float = 0.5
    decay_every_epochs: int = 20
    steps_per_epoch: int = 100
    batch_size: int = 4
    checkpoint_every: int = 500
    channels: str = ",".join(DEFAULT_CHANNELS)

    # external pieces
    noise_checkpoint: str = ""
    encoder_path: str = ""
    scratch_dir: str = ""

    # proxy pretraining
    pretrain_steps: int = 300
    pretrain_qps: str = "22,27,32"
    pretrain_batch: int = 4

    # ---- derived views --------------------------------------------------

    def template(self) -> MessageTemplate:
        return MessageTemplate.for_bits(self.payload_bits)

    def crop(self) -> CropPolicy:
        return CropPolicy(
            frames=self.clip_frames,
            height=self.clip_height,
            width=self.clip_width,
        )

    def channel_list(self) -> tuple:
        return tuple(
            name.strip() for name in self.channels.split(",") if name.strip()
        )

    def qp_list(self) -> tuple:
        try:
            return tuple(int(q) for q in self.pretrain_qps.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad pretrain_qps {self.pretrain_qps!r}") from exc

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(
            stage1_steps=self.stage1_steps,
            stage2_steps=self.stage2_steps,
            stage1_weights=StageWeights(
                self.stage1_video_weight, self.stage1_message_weight, 0.0
            ),
            stage2_weights=StageWeights(
                self.stage2_video_weight,
                self.stage2_message_weight,
                self.stage2_adversarial_weight,
            ),
            learning_rate=self.learning_rate,
            betas=(self.beta1, self.beta2),
            decay_factor=self.decay_factor,
            decay_every_epochs=self.decay_every_epochs,
            steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            channels=self.channel_list(),
        )

    # ---- persistence -----------------------------------------------------

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in dataclasses.fields(cls)}

    def set_key(self, key: str, raw: str):
        kinds = {f.name: f for f in dataclasses.fields(self)}
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(self, key)
        caster = type(current)
        try:
            setattr(self, key, caster(raw))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = cls()
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`")
            key, _, value = line.partition("=")
            config.set_key(key.strip(), value.strip())
        return config

    def to_file(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            f"{f.name} = {getattr(self, f.name)}"
            for f in dataclasses.fields(self)
        ]
        path.write_text("\n".join(lines) + "\n")
        return path
