"""Blind video watermarking via an invertible coupling network.

The embedder and blind extractor are the forward and backward passes of
one parameter set; a frozen, learned compression proxy makes codec-style
distortion differentiable during training.
"""

from .attacks import (
    AttackSpec,
    apply_attack,
    codec_compress,
    frame_average,
    frame_drop,
    frame_swap,
    gaussian_noise,
    parse_attack_spec,
)
from .checkpoint import load_checkpoint, save_checkpoint, state_checksum
from .config import RunConfig
from .discriminator import VideoDiscriminator
from .dwt import WaveletPair, dwt, idwt
from .evaluation import (
    RobustnessReport,
    bit_accuracy,
    emit_report,
    flicker_score,
    psnr,
    run_robustness_suite,
)
from .inn import CouplingBlock, EmbedResult, WatermarkCodec
from .media import (
    ClipDataset,
    CropPolicy,
    Message,
    MessageTemplate,
    load_clip,
    pack_message,
    save_clip,
    synthetic_clip,
    synthetic_dataset,
    unpack_message,
)
from .noise import BandCouplingBlock, CompressionProxy, PretrainSettings, pretrain_proxy
from .training import (
    LossBundle,
    StageWeights,
    TrainSchedule,
    compute_losses,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "BandCouplingBlock",
    "ClipDataset",
    "CompressionProxy",
    "CouplingBlock",
    "CropPolicy",
    "EmbedResult",
    "LossBundle",
    "Message",
    "MessageTemplate",
    "PretrainSettings",
    "RobustnessReport",
    "RunConfig",
    "StageWeights",
    "TrainSchedule",
    "VideoDiscriminator",
    "WatermarkCodec",
    "WaveletPair",
    "apply_attack",
    "bit_accuracy",
    "codec_compress",
    "compute_losses",
    "dwt",
    "emit_report",
    "flicker_score",
    "frame_average",
    "frame_drop",
    "frame_swap",
    "gaussian_noise",
    "idwt",
    "load_checkpoint",
    "load_clip",
    "pack_message",
    "parse_attack_spec",
    "psnr",
    "pretrain_proxy",
    "run_robustness_suite",
    "save_checkpoint",
    "save_clip",
    "state_checksum",
    "synthetic_clip",
    "synthetic_dataset",
    "train",
    "unpack_message",
]
