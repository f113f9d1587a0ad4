import pytest
import torch

from gradcheck_util import grad_mismatch_fraction

from flowmark.checkpoint import state_checksum
from flowmark.dwt import dwt
from flowmark.errors import ShapeError, TrainingError
from flowmark.media import synthetic_clip
from flowmark.noise import (
    BandCouplingBlock,
    CompressionProxy,
    PretrainSettings,
    pretrain_proxy,
)


def _random_bands(seed, n=2, size=4):
    gen = torch.Generator().manual_seed(seed)
    low = torch.rand(n, 3, size, size, generator=gen) * 2 - 1
    highs = tuple(
        torch.rand(n, 3, size, size, generator=gen) - 0.5 for _ in range(3)
    )
    return low, highs


def test_zero_init_block_is_identity():
    block = BandCouplingBlock(hidden=8)
    low, highs = _random_bands(0)
    out_low, out_highs = block(low, highs)
    assert torch.allclose(out_low, low, atol=1e-7)
    for a, b in zip(out_highs, highs):
        assert torch.allclose(a, b, atol=1e-7)


def test_zero_scale_shift_leaves_highs_unchanged():
    # low-band update active, but H and G still zeroed: sigmoid(0) = 0.5
    # puts the log-scale at 0, so every high band passes through intact
    torch.manual_seed(1)
    block = BandCouplingBlock(hidden=8)
    for p in block.feature.parameters():
        p.data.normal_(0, 0.2)
    for p in block.merge.parameters():
        p.data.normal_(0, 0.2)
    low, highs = _random_bands(2)
    out_low, out_highs = block(low, highs)
    assert not torch.allclose(out_low, low)
    for a, b in zip(out_highs, highs):
        assert torch.equal(a, b)


def test_block_inverse_random_params():
    torch.manual_seed(3)
    block = BandCouplingBlock(hidden=8)
    for p in block.parameters():
        p.data.normal_(0, 0.2)
    low, highs = _random_bands(4)
    out_low, out_highs = block(low, highs)
    back_low, back_highs = block.backward(out_low, out_highs)
    assert float((back_low - low).abs().max()) <= 1e-4
    for a, b in zip(back_highs, highs):
        assert float((a - b).abs().max()) <= 1e-4


def test_zero_init_distort_is_identity():
    proxy = CompressionProxy(blocks=8, hidden=8)
    video = synthetic_clip(5, frames=4, height=16, width=16)
    assert float((proxy.distort(video) - video).abs().max()) <= 1e-6


def test_restore_inverts_distort():
    torch.manual_seed(6)
    proxy = CompressionProxy(blocks=4, hidden=8)
    for p in proxy.parameters():
        p.data.normal_(0, 0.1)
    video = synthetic_clip(7, frames=4, height=16, width=16)
    out = proxy.distort(video)
    assert not torch.allclose(out, video)
    assert float((proxy.restore(out) - video).abs().max()) <= 1e-4
    assert out.shape == video.shape


def test_distort_rejects_odd_dims_and_keeps_input():
    proxy = CompressionProxy(blocks=2, hidden=4)
    with pytest.raises(ShapeError):
        proxy.distort(torch.zeros(3, 2, 7, 8))
    video = synthetic_clip(8, frames=2, height=8, width=8)
    copy = video.clone()
    proxy.distort(video)
    assert torch.equal(video, copy)


def test_distort_gradient_matches_finite_differences():
    torch.manual_seed(9)
    proxy = CompressionProxy(blocks=1, hidden=4).double()
    for p in proxy.parameters():
        p.data.normal_(0, 0.2)
    gen = torch.Generator().manual_seed(10)
    video = (torch.rand(3, 2, 4, 4, generator=gen) * 2 - 1).double()
    video.requires_grad_(True)
    target = torch.randn(3, 2, 4, 4, generator=gen).double()

    def scalar():
        return ((proxy.distort(video) - target) ** 2).mean()

    fraction = grad_mismatch_fraction(
        scalar, [video, *proxy.parameters()], samples=300
    )
    assert fraction <= 0.01


def _blur_pairs(count=8, seed=0):
    """Synthetic stand-in for encoder pairs: target = frame-averaged clip."""
    pairs = []
    for i in range(count):
        clip = synthetic_clip(seed + i, frames=2, height=16, width=16)
        pair = dwt(clip)
        softened = pair.ll.clone()
        from flowmark.dwt import WaveletPair, idwt

        target = idwt(
            WaveletPair(softened, tuple(h * 0.2 for h in pair.highs))
        )
        pairs.append((clip, target))
    return pairs


def test_pretrain_zero_steps_keeps_initialization():
    pairs = _blur_pairs(2)
    settings = PretrainSettings(steps=0, seed=13, blocks=2, hidden=4)
    proxy, history = pretrain_proxy(pairs, settings)
    torch.manual_seed(13)
    fresh = CompressionProxy(blocks=2, hidden=4)
    assert history == []
    assert proxy.frozen
    assert state_checksum(proxy) == state_checksum(fresh)


def test_pretrain_empty_dataset_rejected():
    with pytest.raises(TrainingError):
        pretrain_proxy([], PretrainSettings(steps=1))


def test_pretrain_reduces_loss_and_freezes():
    pairs = _blur_pairs(8)
    settings = PretrainSettings(
        steps=150, batch_size=4, learning_rate=1e-3, seed=1, blocks=2, hidden=8
    )
    proxy, history = pretrain_proxy(pairs, settings)
    assert history[-1] <= 0.5 * history[0]
    assert proxy.frozen
    assert all(not p.requires_grad for p in proxy.parameters())
    # moving average over 50-step windows never increases
    window = 50
    averages = [
        sum(history[i : i + window]) / window
        for i in range(0, len(history) - window + 1, window)
    ]
    assert all(b <= a * 1.05 for a, b in zip(averages, averages[1:]))
    # the fitted proxy actually tracks the degradation on held-out clips
    held_out = _blur_pairs(4, seed=100)
    with torch.no_grad():
        for clip, target in held_out:
            fitted = float(((proxy.distort(clip) - target) ** 2).mean())
            baseline = float(((clip - target) ** 2).mean())
            assert fitted < baseline


def test_checkpoint_roundtrip_preserves_frozen_flag(tmp_path):
    torch.manual_seed(21)
    proxy = CompressionProxy(blocks=2, hidden=4)
    for p in proxy.parameters():
        p.data.normal_(0, 0.1)
    proxy.freeze_()
    path = tmp_path / "noise.ckpt"
    proxy.save(path)
    again = CompressionProxy.from_checkpoint(path)
    assert again.frozen
    video = synthetic_clip(3, frames=2, height=8, width=8)
    assert torch.equal(proxy.distort(video), again.distort(video))
