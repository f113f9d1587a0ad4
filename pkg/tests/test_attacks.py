import math

import pytest
import torch

from flowmark.attacks import (
    AttackSpec,
    apply_attack,
    codec_compress,
    encoder_available,
    frame_average,
    frame_drop,
    frame_swap,
    gaussian_noise,
    parse_attack_spec,
)
from flowmark.errors import EncoderMissingError, ShapeError
from flowmark.evaluation import psnr
from flowmark.media import synthetic_clip

needs_encoder = pytest.mark.skipif(
    not encoder_available(), reason="no video encoder binary available"
)


def _clip(seed=0, frames=8):
    return synthetic_clip(seed, frames=frames, height=16, width=16)


def test_identity_cases_are_bit_exact():
    video = _clip(1)
    assert torch.equal(frame_average(video, 1), video)
    assert torch.equal(frame_drop(video, 0.0, seed=3), video)
    assert torch.equal(frame_swap(video, 0.0, seed=3), video)
    assert torch.equal(gaussian_noise(video, 0.0, seed=3), video)
    assert torch.equal(apply_attack(video, AttackSpec("identity")), video)


def test_constant_clip_unchanged():
    video = torch.full((3, 8, 8, 8), 0.25)
    assert torch.allclose(frame_average(video, 5), video)
    assert torch.equal(frame_swap(video, 1.0, seed=0), video)


def test_frame_average_window_values():
    # frames valued 0, 1, 2: center frame averages to 1, the first frame
    # reflects to (1, 0, 1) and averages to 2/3
    video = torch.stack(
        [torch.full((3, 4, 4), float(t)) for t in range(3)], dim=1
    )
    out = frame_average(video, 3)
    assert out[0, 1, 0, 0].item() == pytest.approx(1.0)
    assert out[0, 0, 0, 0].item() == pytest.approx(2.0 / 3.0)
    assert out[0, 2, 0, 0].item() == pytest.approx(2.0 - 2.0 / 3.0)


def test_frame_average_rejects_even_or_wide_windows():
    video = _clip(2)
    with pytest.raises(ShapeError):
        frame_average(video, 2)
    with pytest.raises(ShapeError):
        frame_average(video, 17)


def test_frame_drop_collapse_and_determinism():
    video = _clip(3)
    collapsed = frame_drop(video, 1.0, seed=5)
    for t in range(video.shape[1]):
        assert torch.equal(collapsed[:, t], video[:, 0])
    a = frame_drop(video, 0.5, seed=9)
    b = frame_drop(video, 0.5, seed=9)
    assert torch.equal(a, b)
    assert not torch.equal(frame_drop(video, 0.5, seed=10), a)


def test_frame_drop_repeats_nearest_earlier_frame():
    video = _clip(4)
    out = frame_drop(video, 0.5, seed=2)
    for t in range(video.shape[1]):
        matches = [
            k for k in range(video.shape[1])
            if torch.equal(out[:, t], video[:, k])
        ]
        assert matches and max(m for m in matches if m <= t) <= t


def test_frame_swap_full_probability_permutation():
    video = _clip(5)
    swapped = frame_swap(video, 1.0, seed=0)
    expected_order = [1, 0, 3, 2, 5, 4, 7, 6]
    for t, k in enumerate(expected_order):
        assert torch.equal(swapped[:, t], video[:, k])


def test_gaussian_noise_statistics():
    zero = torch.zeros(3, 8, 256, 256)  # > 1.5e6 samples
    noisy = gaussian_noise(zero, 0.04, seed=11)
    samples = noisy.flatten()
    count = samples.numel()
    assert abs(float(samples.mean())) <= 4 * 0.04 / math.sqrt(count) * 2
    assert float(samples.std()) == pytest.approx(0.04, rel=0.01)
    assert torch.equal(noisy, gaussian_noise(zero, 0.04, seed=11))


def test_attacks_preserve_shape_and_range():
    video = _clip(6)
    for spec in [
        AttackSpec("frame_average", {"n": 3}),
        AttackSpec("frame_drop", {"p": 0.5}, seed=1),
        AttackSpec("frame_swap", {"p": 0.5}, seed=1),
        AttackSpec("gaussian", {"std": 0.5}, seed=1),
    ]:
        out = apply_attack(video, spec)
        assert out.shape == video.shape
        assert float(out.min()) >= -1.0 and float(out.max()) <= 1.0


def test_spec_parsing_roundtrip():
    spec = parse_attack_spec("gaussian:std=0.04,seed=7")
    assert spec == AttackSpec("gaussian", {"std": 0.04}, seed=7)
    assert parse_attack_spec(str(spec)) == spec
    assert parse_attack_spec("hevc:qp=22") == AttackSpec("hevc", {"qp": 22})
    assert parse_attack_spec("identity") == AttackSpec("identity")
    assert parse_attack_spec("frame_average:n=3").params == {"n": 3}


@pytest.mark.parametrize(
    "text",
    ["warp", "frame_average:n=2", "frame_drop:p=1.5", "gaussian:std=-1",
     "hevc:qp=99", "gaussian:oops=1", "gaussian:std"],
)
def test_bad_specs_rejected(text):
    with pytest.raises(ValueError):
        parse_attack_spec(text)


def test_codec_missing_encoder_raises(monkeypatch):
    monkeypatch.setenv("PATH", "")
    monkeypatch.delenv("FLOWMARK_ENCODER", raising=False)
    with pytest.raises(EncoderMissingError):
        codec_compress(_clip(7), "hevc", 22)


def test_codec_rejects_unknown_codec():
    with pytest.raises(ValueError):
        codec_compress(_clip(8), "av1", 30)


@needs_encoder
def test_codec_roundtrip_shape_and_quality():
    video = synthetic_clip(9, frames=8, height=32, width=32)
    lossless = codec_compress(video, "hevc", 0)
    assert lossless.shape == video.shape
    assert psnr(video, lossless) >= 45.0


@needs_encoder
def test_codec_quality_monotonicity():
    video = synthetic_clip(10, frames=8, height=32, width=32)
    mild = codec_compress(video, "hevc", 22)
    strong = codec_compress(video, "hevc", 32)
    assert psnr(video, mild) > psnr(video, strong)
    mild264 = codec_compress(video, "h264", 22)
    strong264 = codec_compress(video, "h264", 32)
    assert psnr(video, mild264) > psnr(video, strong264)
