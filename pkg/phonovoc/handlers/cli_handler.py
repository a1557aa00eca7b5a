"""Command-line front end: corpus, train, encode, decode, report, reference-stream."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from phonovoc.services.bitstream_service import (
    StreamHeader,
    measure_bitrate,
    pack,
    reference_stream,
    read_stream,
    unpack,
    write_stream,
)
from phonovoc.services.codec_service import CodecService
from phonovoc.services.corpus_service import write_corpus
from phonovoc.services.metrics_service import QualityReport, latency_report, mcd, stoi
from phonovoc.services.training_service import TrainingService
from phonovoc.utils.config import CodecConfig
from phonovoc.utils.errors import ConfigError, CorruptStream, PhonovocError
from phonovoc.utils.log import configure_logging
from phonovoc.utils.schemes import TOY_CONSONANTS
from phonovoc.utils.wavio import read_wav

logger = logging.getLogger(__name__)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (default: PHONOVOC_CONFIG)")
    common.add_argument("--profile", help="Profile name, e.g. gp16 (default: PHONOVOC_PROFILE or gp16)")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--jobs", type=int, help="Worker threads")
    common.add_argument("--out", help="Output path")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="phonovoc", description="Phonological very-low-bit-rate speech codec")
    commands = parser.add_subparsers(dest="command", required=True)

    corpus = commands.add_parser("corpus", parents=[common], help="Generate the synthetic CV-syllable corpus")
    corpus.add_argument("--utterances", type=int, default=20, help="Number of utterances")
    corpus.add_argument("--consonants", default=",".join(TOY_CONSONANTS), help="Comma-separated onsets")

    train = commands.add_parser("train", parents=[common], help="Train all models of a profile")
    train.add_argument("manifest", help="Corpus manifest (wav<TAB>labels<TAB>boundaries)")

    encode = commands.add_parser("encode", parents=[common], help="Encode a WAV file")
    encode.add_argument("input", help="Input WAV")
    encode.add_argument("--json", action="store_true", help="Print the bit-rate report as JSON")

    decode = commands.add_parser("decode", parents=[common], help="Decode a stream to WAV")
    decode.add_argument("input", help="Input .pvc stream")

    report = commands.add_parser("report", parents=[common], help="Score a decoded file")
    report.add_argument("reference", help="Reference WAV")
    report.add_argument("test", help="Decoded WAV")
    report.add_argument("stream", help="Stream the test file was decoded from")
    report.add_argument("--json", action="store_true", help="Print JSON instead of a table")

    reference = commands.add_parser("reference-stream", parents=[common],
                                    help="Write a stream with the reference block and syllable statistics")
    reference.add_argument("--duration", type=float, default=100.0, help="Stream duration in seconds")
    reference.add_argument("--index-bits", type=int, default=10, help="Codebook index width")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for key in ("seed", "jobs", "log_level"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.command == "train" and args.out:
        overrides["model_dir"] = args.out
    return overrides


def _require_out(args: argparse.Namespace) -> Path:
    if not args.out:
        raise ConfigError(f"'{args.command}' needs --out")
    return Path(args.out)


def cmd_corpus(config: CodecConfig, args: argparse.Namespace) -> int:
    consonants = [c.strip() for c in args.consonants.split(",") if c.strip()]
    unknown = sorted(set(consonants) - set(TOY_CONSONANTS))
    if unknown or not consonants:
        raise ConfigError(f"--consonants must be drawn from {','.join(TOY_CONSONANTS)}, got {args.consonants!r}")
    if args.utterances < 1:
        raise ConfigError(f"--utterances must be positive, got {args.utterances}")
    manifest = write_corpus(
        _require_out(args), args.utterances, config.seed, sample_rate=config.sample_rate,
        consonants=consonants, jobs=config.jobs,
    )
    print(manifest)
    return 0


def cmd_train(config: CodecConfig, args: argparse.Namespace) -> int:
    report = TrainingService(config).train(args.manifest)
    for path in report.artifacts:
        print(path)
    return 0


def cmd_encode(config: CodecConfig, args: argparse.Namespace) -> int:
    codec = CodecService.from_config(config)
    encoded = codec.encode_file(args.input, _require_out(args))
    print(json.dumps(encoded.bitrate.to_dict(), indent=2) if args.json else encoded.bitrate.format_table())
    return 0


def cmd_decode(config: CodecConfig, args: argparse.Namespace) -> int:
    codec = CodecService.from_config(config)
    clip = codec.decode_file(args.input, _require_out(args))
    logger.info("Decoded %.0f ms of audio to %s", clip.duration_ms, args.out)
    return 0


def build_report(config: CodecConfig, reference_path, test_path, stream_path) -> QualityReport:
    """
    Score a decoded file against its reference and account the stream's bit rate.

    Raises:
        ConfigError: If any of the three files is missing
        NotABitstream: If the stream file is not a container
        CorruptStream: If the stream records no audio
        TooShort: If the audio is too short to score
    """
    reference = read_wav(reference_path, config.sample_rate)
    test = read_wav(test_path, config.sample_rate)
    container = unpack(read_stream(stream_path))
    header = container.header
    duration_ms = header.duration_ms or header.frame_count * header.frame_shift_ms
    if duration_ms <= 0:
        raise CorruptStream(f"Stream {stream_path} records no audio")
    bitrate = measure_bitrate(container.blocks, container.codes, duration_ms / 1000.0, header.index_bits)

    mean_syllable = latency_report(container.codes) if container.codes else None
    return QualityReport(
        mcd_db=mcd(reference, test),
        stoi=stoi(reference, test),
        bitrate=bitrate,
        mean_syllable_ms=mean_syllable,
        total_latency_ms=None if mean_syllable is None else mean_syllable + config.network_latency_ms,
    )


def cmd_report(config: CodecConfig, args: argparse.Namespace) -> int:
    report = build_report(config, args.reference, args.test, args.stream)
    print(report.to_json() if args.json else report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
    return 0


def cmd_reference_stream(config: CodecConfig, args: argparse.Namespace) -> int:
    if args.duration <= 0:
        raise ConfigError(f"--duration must be positive, got {args.duration}")
    if not 1 <= args.index_bits <= 32:
        raise ConfigError(f"--index-bits must be in [1, 32], got {args.index_bits}")
    blocks, codes = reference_stream(args.duration, args.index_bits, config.seed)
    header = StreamHeader(
        scheme_id=0,
        frame_shift_ms=16,
        index_bits=args.index_bits,
        segmental_hash=bytes(8),
        prosodic_hash=bytes(8),
        frame_count=sum(block.run_len for block in blocks),
        block_count=len(blocks),
        syllable_count=len(codes),
        duration_ms=int(round(args.duration * 1000.0)),
    )
    data = pack(blocks, codes, header)
    if args.out:
        write_stream(args.out, data)
    bitrate = measure_bitrate(blocks, codes, args.duration, args.index_bits)
    print(bitrate.format_table())
    print(f"{'mean syllable (ms)':<24}{latency_report(codes):>10.1f}")
    return 0


COMMANDS = {
    "corpus": cmd_corpus,
    "train": cmd_train,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "report": cmd_report,
    "reference-stream": cmd_reference_stream,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Returns:
        int: 0 on success, else the exit code of the codec error raised
        (1 config, 2 input signal, 3 stream integrity, 4 training)
    """
    args = build_parser().parse_args(argv)
    try:
        config = CodecConfig(args.config, args.profile, _overrides(args))
        configure_logging(config.log_level)
        return COMMANDS[args.command](config, args)
    except PhonovocError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
