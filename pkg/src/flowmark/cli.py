"""Command-line entry point.

One subcommand per pipeline stage: ingest, pretrain-noise, train, embed,
extract, attack, evaluate, report. Every run prints a single
machine-parseable summary line (`flowmark <sub> key=value ...`) and uses
fixed exit statuses: 0 ok, 2 usage error, 3 bad configuration,
4 missing/invalid checkpoint, 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import evaluation, media, training
from .attacks import apply_attack, codec_compress, parse_attack_spec
from .checkpoint import checkpoint_hash
from .config import RunConfig
from .discriminator import VideoDiscriminator
from .errors import CheckpointError, ConfigError, FlowmarkError
from .inn import WatermarkCodec
from .media import (
    ClipDataset,
    CropPolicy,
    load_clip,
    pack_message,
    random_bits,
    save_clip,
    synthetic_dataset,
)
from .noise import CompressionProxy, PretrainSettings, pretrain_proxy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4


def _summary(subcommand: str, **fields):
    parts = " ".join(f"{k}={v}" for k, v in fields.items())
    print(f"flowmark {subcommand} {parts}".rstrip())


def _add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", "-c", help="run configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        config.set_key(key.strip(), value.strip())
    return config


def _build_dataset(config: RunConfig):
    if config.synthetic_clips > 0:
        return synthetic_dataset(
            config.synthetic_clips,
            seed=config.seed,
            frames=config.clip_frames,
            height=config.clip_height,
            width=config.clip_width,
        )
    if not config.data_dir:
        raise ConfigError("set data_dir or synthetic_clips in the config")
    root = Path(config.data_dir)
    if not root.is_dir():
        raise ConfigError(f"data_dir {root} is not a directory")
    sources = sorted(p for p in root.iterdir() if not p.name.endswith(".hdr"))
    if not sources:
        raise ConfigError(f"data_dir {root} holds no clip sources")
    return ClipDataset(sources, config.crop(), seed=config.seed)


def _load_codec(path) -> WatermarkCodec:
    return training.load_codec_from(path)


# --- subcommand handlers ----------------------------------------------------


def _cmd_ingest(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    crop = CropPolicy(config.clip_frames, config.clip_height, config.clip_width)
    clips = []
    if args.synthetic:
        dataset = synthetic_dataset(
            args.synthetic, seed=config.seed,
            frames=crop.frames, height=crop.height, width=crop.width,
        )
        clips = list(dataset)
    for i, source in enumerate(args.sources):
        clips.append(load_clip(source, crop, seed=config.seed + i))
    if not clips:
        raise ConfigError("nothing to ingest: give --sources or --synthetic")
    for i, clip in enumerate(clips):
        save_clip(out / f"clip_{i:04d}", clip)
    _summary("ingest", clips=len(clips), out=out)
    return EXIT_OK


def _cmd_pretrain_noise(args) -> int:
    config = _load_config(args)
    dataset = _build_dataset(config)
    pairs = []
    for clip in dataset:
        for qp in config.qp_list():
            pairs.append(
                (
                    clip,
                    codec_compress(
                        clip, "hevc", qp,
                        encoder_path=config.encoder_path or None,
                        scratch_dir=config.scratch_dir or None,
                    ),
                )
            )
    settings = PretrainSettings(
        steps=config.pretrain_steps,
        batch_size=config.pretrain_batch,
        seed=config.seed,
        blocks=config.proxy_blocks,
        hidden=config.proxy_hidden,
    )
    proxy, history = pretrain_proxy(pairs, settings)
    out = Path(args.out or Path(config.out_dir) / "noise.ckpt")
    proxy.save(out, {"qps": list(config.qp_list())})
    _summary(
        "pretrain-noise",
        pairs=len(pairs),
        steps=len(history),
        initial_loss=f"{history[0]:.6f}" if history else "nan",
        final_loss=f"{history[-1]:.6f}" if history else "nan",
        out=out,
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    dataset = _build_dataset(config)
    schedule = config.schedule()
    torch.manual_seed(config.seed)
    codec = WatermarkCodec(
        config.template(), blocks=config.codec_blocks, hidden=config.codec_hidden
    )
    disc = (
        VideoDiscriminator(width=config.disc_width)
        if schedule.stage2_steps > 0
        else None
    )
    noise = None
    if "proxy" in schedule.channels:
        if not config.noise_checkpoint:
            raise ConfigError(
                "channels include the proxy but noise_checkpoint is unset"
            )
        noise = CompressionProxy.from_checkpoint(config.noise_checkpoint)
        if not noise.frozen:
            raise ConfigError("configured noise checkpoint is not frozen")
    out_dir = Path(config.out_dir)
    result = training.train(
        codec, noise, disc, dataset, schedule,
        out_dir=out_dir, resume_from=args.resume,
    )
    codec_path = out_dir / "codec.ckpt"
    codec.save(codec_path)
    last = result.metrics[-1] if result.metrics else None
    _summary(
        "train",
        steps=schedule.total_steps,
        acc="nan" if last is None else f"{last.acc:.2f}",
        psnr="nan" if last is None else f"{last.psnr_db:.2f}",
        codec=codec_path,
        metrics=out_dir / "metrics.csv",
    )
    return EXIT_OK


def _cmd_embed(args) -> int:
    config = _load_config(args)
    codec = _load_codec(args.ckpt)
    cover = load_clip(args.clip)
    if args.bits:
        bits = tuple(int(b) for b in args.bits)
    else:
        bits = random_bits(codec.template.bit_count, args.payload_seed)
    message = pack_message(bits, codec.template)
    with torch.no_grad():
        result = codec.embed(cover, message)
    out = Path(args.out)
    save_clip(out, result.watermarked)
    quality = evaluation.psnr(cover, result.watermarked)
    record = {
        "bits": "".join(str(b) for b in bits),
        "template": {
            "bit_count": codec.template.bit_count,
            "side": codec.template.side,
            "kind": codec.template.kind,
        },
        "checkpoint_sha256": checkpoint_hash(args.ckpt),
        "psnr_db": quality,
    }
    record_path = out / "record.json"
    record_path.write_text(json.dumps(record, indent=2) + "\n")
    _summary(
        "embed", out=out, record=record_path, psnr=f"{quality:.2f}",
        bits=record["bits"],
    )
    del config
    return EXIT_OK


def _cmd_extract(args) -> int:
    codec = _load_codec(args.ckpt)
    clip = load_clip(args.clip)
    with torch.no_grad():
        message = codec.extract(clip)
    bits = "".join(str(b) for b in message.bits)
    fields = {"bits": bits}
    if args.expect:
        record = json.loads(Path(args.expect).read_text())
        expected = tuple(int(b) for b in record["bits"])
        fields["acc"] = f"{evaluation.bit_accuracy(message.bits, expected):.2f}"
        fields["ckpt_match"] = int(
            record.get("checkpoint_sha256") == checkpoint_hash(args.ckpt)
        )
    _summary("extract", **fields)
    return EXIT_OK


def _cmd_attack(args) -> int:
    config = _load_config(args)
    spec = parse_attack_spec(args.spec)
    clip = load_clip(args.clip)
    hit = apply_attack(
        clip, spec,
        encoder_path=args.encoder or config.encoder_path or None,
        scratch_dir=config.scratch_dir or None,
    )
    out = Path(args.out)
    save_clip(out, hit)
    _summary("attack", spec=spec, out=out)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    dataset = _build_dataset(config)
    codecs = [_load_codec(path) for path in args.ckpt]
    specs = [
        parse_attack_spec(s)
        for chunk in args.attacks
        for s in chunk.split(";")
        if s.strip()
    ]
    if not specs:
        specs = []
    report = evaluation.run_robustness_suite(
        codecs,
        dataset,
        specs,
        seed=config.seed,
        encoder_path=config.encoder_path or None,
        scratch_dir=config.scratch_dir or None,
        metadata={
            "checkpoints": [checkpoint_hash(p) for p in args.ckpt],
            "dataset": config.data_dir or f"synthetic:{config.synthetic_clips}",
        },
    )
    out = Path(args.out)
    written = evaluation.emit_report(report, out)
    params = [evaluation.count_codec_parameters(c) for c in codecs]
    flops = [
        evaluation.estimate_codec_flops(
            c, (3, config.clip_frames, config.clip_height, config.clip_width)
        )
        for c in codecs
    ]
    _summary(
        "evaluate",
        rows=len(report.rows),
        files=len(written),
        out=out,
        params=",".join(str(p) for p in params),
        flops=",".join(str(f) for f in flops),
        reference_params_m=evaluation.REFERENCE_PARAMS_M,
        reference_gflops=evaluation.REFERENCE_GFLOPS,
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    report = evaluation.read_report_csv(args.report)
    written = evaluation.emit_report(
        report, args.out, formats=("csv", "plots")
    )
    _summary("report", rows=len(report.rows), files=len(written), out=args.out)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmark",
        description="Blind video watermarking with an invertible codec.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("ingest", help="normalize sources into clip dirs")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sources", nargs="*", default=[], help="clip sources")
    p.add_argument("--synthetic", type=int, default=0,
                   help="also generate N synthetic clips")
    p.set_defaults(handler=_cmd_ingest)

    p = subs.add_parser(
        "pretrain-noise", help="fit the compression proxy to a real encoder"
    )
    _add_config_args(p)
    p.add_argument("--out", help="proxy checkpoint path")
    p.set_defaults(handler=_cmd_pretrain_noise)

    p = subs.add_parser("train", help="run the two-stage watermark training")
    _add_config_args(p)
    p.add_argument("--resume", help="training-state checkpoint to resume")
    p.set_defaults(handler=_cmd_train)

    p = subs.add_parser("embed", help="embed a payload into a clip")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True, help="codec checkpoint")
    p.add_argument("--in", dest="clip", required=True, help="cover clip")
    p.add_argument("--out", required=True, help="watermarked clip directory")
    p.add_argument("--bits", help="payload as a 0/1 string")
    p.add_argument("--payload-seed", type=int, default=0,
                   help="derive payload bits from this seed")
    p.set_defaults(handler=_cmd_embed)

    p = subs.add_parser("extract", help="blind-extract a payload")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True, help="codec checkpoint")
    p.add_argument("--in", dest="clip", required=True, help="clip to read")
    p.add_argument("--expect", help="embed record.json to score against")
    p.set_defaults(handler=_cmd_extract)

    p = subs.add_parser("attack", help="apply one distortion to a clip")
    _add_config_args(p)
    p.add_argument("--in", dest="clip", required=True, help="input clip")
    p.add_argument("--out", required=True, help="output clip directory")
    p.add_argument("--spec", required=True,
                   help="attack spec, e.g. hevc:qp=22 or gaussian:std=0.04,seed=7")
    p.add_argument("--encoder", help="encoder binary for codec attacks")
    p.set_defaults(handler=_cmd_attack)

    p = subs.add_parser("evaluate", help="run the robustness sweep")
    _add_config_args(p)
    p.add_argument("--ckpt", action="append", required=True,
                   help="codec checkpoint (repeatable)")
    p.add_argument("--attack", dest="attacks", action="append", default=[],
                   help="attack spec like hevc:qp=22 (repeatable; "
                        "semicolon-separated lists accepted)")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(handler=_cmd_evaluate)

    p = subs.add_parser("report", help="re-render plots from a report CSV")
    _add_config_args(p)
    p.add_argument("--report", required=True, help="existing report.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"flowmark: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"flowmark: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FlowmarkError as exc:
        print(f"flowmark: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
