"""Shared fixtures: one desk-scale training run reused across the suite."""

import pytest
import torch

from flowmark.inn import WatermarkCodec
from flowmark.media import MessageTemplate, synthetic_dataset
from flowmark.noise import CompressionProxy
from flowmark.training import TrainSchedule, train

SMOKE_CLIPS = 16
SMOKE_SHAPE = (8, 32, 32)  # frames, height, width
SMOKE_BITS = 64
SMOKE_BLOCKS = 16
SMOKE_STEPS = 1500  # stage-1 budget ceiling


@pytest.fixture(scope="session")
def toy_run():
    """Train the stage-1 smoke model once per session.

    16 synthetic clips at 3x8x32x32, 64-bit square payload, 16 blocks,
    stage 1 only, default distortion mix with a zero-initialized frozen
    proxy standing in for the pretrained one.
    """
    frames, height, width = SMOKE_SHAPE
    dataset = synthetic_dataset(
        SMOKE_CLIPS, seed=3, frames=frames, height=height, width=width
    )
    template = MessageTemplate.for_bits(SMOKE_BITS)
    torch.manual_seed(7)
    codec = WatermarkCodec(template, blocks=SMOKE_BLOCKS, hidden=32)
    proxy = CompressionProxy(blocks=8, hidden=16).freeze_()
    schedule = TrainSchedule(
        stage1_steps=SMOKE_STEPS,
        stage2_steps=0,
        steps_per_epoch=100,
        batch_size=4,
        seed=11,
        checkpoint_every=0,
    )
    result = train(codec, proxy, None, dataset, schedule)
    return {
        "codec": codec,
        "proxy": proxy,
        "dataset": dataset,
        "template": template,
        "schedule": schedule,
        "metrics": result.metrics,
    }


@pytest.fixture(scope="session")
def trained_codec_path(toy_run, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "codec.ckpt"
    toy_run["codec"].save(path)
    return path
