import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from phonovoc.services.prosody_service import N_LEVELS, SyllableCode
from phonovoc.services.segmental_service import SegmentalBlock
from phonovoc.utils.errors import CodebookMismatch, ConfigError, CorruptStream, EncodeOverflow, NotABitstream, TooShort

logger = logging.getLogger(__name__)

STREAM_MAGIC = b"PVC1"
STREAM_VERSION = 1
HEADER_FORMAT = "<4sBBBB8s8sIIII"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
SECTION_LENGTH_FORMAT = "<I"

RUN_BITS = 2
MEAN_BITS = 3
SLOPE_BITS = 3
DURATION_BITS = 4
SYLLABLE_BITS = MEAN_BITS + SLOPE_BITS + DURATION_BITS


class BitWriter:
    """Accumulates unsigned fields MSB-first into a byte buffer."""

    def __init__(self):
        self.buffer = bytearray()
        self.current_byte = 0
        self.bit_count = 0

    def write(self, value: int, width: int):
        """
        Append `value` as a `width`-bit field.

        Raises:
            EncodeOverflow: If the value does not fit
        """
        if not 0 <= value < (1 << width):
            raise EncodeOverflow(f"Value {value} does not fit in {width} bits")
        for shift in range(width - 1, -1, -1):
            self.current_byte = (self.current_byte << 1) | ((value >> shift) & 1)
            self.bit_count += 1
            if self.bit_count == 8:
                self.buffer.append(self.current_byte)
                self.current_byte = 0
                self.bit_count = 0

    def flush(self) -> bytes:
        """Zero-pad the last byte and return everything written."""
        if self.bit_count > 0:
            self.buffer.append(self.current_byte << (8 - self.bit_count))
            self.current_byte = 0
            self.bit_count = 0
        return bytes(self.buffer)


class BitReader:
    """Reads unsigned MSB-first fields from a byte string."""

    def __init__(self, data: bytes):
        self.data = data
        self.position = 0

    @property
    def remaining_bits(self) -> int:
        return 8 * len(self.data) - self.position

    def read(self, width: int) -> int:
        """
        Raises:
            CorruptStream: If fewer than `width` bits remain
        """
        if width > self.remaining_bits:
            raise CorruptStream("Unexpected end of section")
        value = 0
        for _ in range(width):
            byte = self.data[self.position >> 3]
            bit = (byte >> (7 - (self.position & 7))) & 1
            value = (value << 1) | bit
            self.position += 1
        return value


@dataclass(frozen=True)
class StreamHeader:
    """Fixed-size container header; multi-byte integers are little-endian."""

    scheme_id: int
    frame_shift_ms: int
    index_bits: int
    segmental_hash: bytes
    prosodic_hash: bytes
    frame_count: int
    block_count: int
    syllable_count: int
    duration_ms: int = 0
    version: int = STREAM_VERSION

    def to_bytes(self) -> bytes:
        try:
            return struct.pack(
                HEADER_FORMAT, STREAM_MAGIC, self.version, self.scheme_id, self.frame_shift_ms,
                self.index_bits, self.segmental_hash, self.prosodic_hash, self.frame_count,
                self.block_count, self.syllable_count, self.duration_ms,
            )
        except struct.error as e:
            raise EncodeOverflow(f"Header field out of range: {e}")

    @classmethod
    def from_bytes(cls, data: bytes) -> "StreamHeader":
        if len(data) < 4 or data[:4] != STREAM_MAGIC:
            raise NotABitstream("Missing PVC1 magic")
        if len(data) < HEADER_SIZE:
            raise CorruptStream("Truncated header")
        (_, version, scheme_id, shift, index_bits, seg_hash, pros_hash,
         frames, blocks, syllables, duration) = struct.unpack_from(HEADER_FORMAT, data)
        if version != STREAM_VERSION:
            raise NotABitstream(f"Unsupported stream version {version}")
        return cls(scheme_id, shift, index_bits, seg_hash, pros_hash, frames, blocks, syllables, duration, version)


@dataclass
class BitstreamContainer:
    """Header plus the segmental and prosodic code streams."""

    header: StreamHeader
    blocks: List[SegmentalBlock] = field(default_factory=list)
    codes: List[SyllableCode] = field(default_factory=list)


def _pack_blocks(blocks: Sequence[SegmentalBlock], index_bits: int) -> bytes:
    writer = BitWriter()
    for block in blocks:
        writer.write(block.index, index_bits)
        writer.write(block.run_len - 1, RUN_BITS)
    return writer.flush()


def _pack_codes(codes: Sequence[SyllableCode]) -> bytes:
    writer = BitWriter()
    for code in codes:
        writer.write(code.mean_idx, MEAN_BITS)
        writer.write(code.slope_idx, SLOPE_BITS)
        writer.write(code.dur_steps - 1, DURATION_BITS)
    return writer.flush()


def _section(payload: bytes) -> bytes:
    return struct.pack(SECTION_LENGTH_FORMAT, len(payload)) + payload


def pack(blocks: Sequence[SegmentalBlock], codes: Sequence[SyllableCode], header: StreamHeader) -> bytes:
    """
    Serialize a container.

    Each block takes index_bits + 2 bits (run length stored minus one) and
    each syllable takes 3 + 3 + 4 bits (duration stored minus one). Both
    sections are length-prefixed and padded to a whole byte.

    Args:
        blocks: Segmental stream
        codes: Prosodic stream
        header: Header whose counts must describe the streams

    Returns:
        bytes: The encoded container

    Raises:
        EncodeOverflow: If any field exceeds its bit width or the counts disagree
    """
    if not 1 <= header.index_bits <= 32:
        raise EncodeOverflow(f"index_bits must be in [1, 32], got {header.index_bits}")
    if header.block_count != len(blocks) or header.syllable_count != len(codes):
        raise EncodeOverflow("Header counts do not match the streams")
    if header.frame_count != sum(block.run_len for block in blocks):
        raise EncodeOverflow("Header frame count does not match the block run lengths")
    return header.to_bytes() + _section(_pack_blocks(blocks, header.index_bits)) + _section(_pack_codes(codes))


def _read_section(data: bytes, offset: int) -> Tuple[bytes, int]:
    if offset + 4 > len(data):
        raise CorruptStream("Truncated section length")
    (length,) = struct.unpack_from(SECTION_LENGTH_FORMAT, data, offset)
    start = offset + 4
    if start + length > len(data):
        raise CorruptStream("Truncated section")
    return data[start:start + length], start + length


def _expect_length(payload: bytes, n_items: int, item_bits: int, name: str):
    expected = (n_items * item_bits + 7) // 8
    if len(payload) != expected:
        raise CorruptStream(f"{name} section holds {len(payload)} bytes, expected {expected}")


def unpack(
    data: bytes,
    segmental_hash: Optional[bytes] = None,
    prosodic_hash: Optional[bytes] = None,
) -> BitstreamContainer:
    """
    Parse a container.

    Args:
        data: Encoded container
        segmental_hash: Optional 8-byte hash of the codebook the caller will decode with
        prosodic_hash: Optional 8-byte hash of the prosodic codebook

    Returns:
        BitstreamContainer: Header and both streams

    Raises:
        NotABitstream: If the magic or version is wrong
        CorruptStream: If a section is truncated or its counts disagree
        CodebookMismatch: If a supplied hash differs from the header
    """
    header = StreamHeader.from_bytes(data)
    if segmental_hash is not None and segmental_hash[:8] != header.segmental_hash:
        raise CodebookMismatch("Segmental codebook does not match the stream")
    if prosodic_hash is not None and prosodic_hash[:8] != header.prosodic_hash:
        raise CodebookMismatch("Prosodic codebook does not match the stream")
    if header.index_bits < 1:
        raise CorruptStream("index_bits must be at least 1")

    segmental, offset = _read_section(data, HEADER_SIZE)
    prosodic, offset = _read_section(data, offset)
    if offset != len(data):
        raise CorruptStream(f"{len(data) - offset} trailing bytes after the prosodic section")

    block_bits = header.index_bits + RUN_BITS
    _expect_length(segmental, header.block_count, block_bits, "Segmental")
    _expect_length(prosodic, header.syllable_count, SYLLABLE_BITS, "Prosodic")

    reader = BitReader(segmental)
    blocks = []
    for _ in range(header.block_count):
        index = reader.read(header.index_bits)
        blocks.append(SegmentalBlock(index, reader.read(RUN_BITS) + 1))
    if sum(block.run_len for block in blocks) != header.frame_count:
        raise CorruptStream("Block run lengths do not add up to the frame count")

    reader = BitReader(prosodic)
    codes = []
    for _ in range(header.syllable_count):
        mean_idx = reader.read(MEAN_BITS)
        slope_idx = reader.read(SLOPE_BITS)
        codes.append(SyllableCode(mean_idx, slope_idx, reader.read(DURATION_BITS) + 1))

    return BitstreamContainer(header, blocks, codes)


def write_stream(path: Union[str, Path], data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def read_stream(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Stream file not found: {path}")
    return path.read_bytes()


BITRATE_ROWS = ("code", "code_duration", "f0_mean", "f0_slope", "syllable_duration")


@dataclass
class BitRateReport:
    """Bits per second spent on each field of the two streams."""

    rows: Dict[str, float]
    blocks_per_s: float
    syllables_per_s: float
    index_bits: int

    @property
    def total(self) -> float:
        return float(sum(self.rows.values()))

    def to_dict(self) -> Dict[str, object]:
        return {
            "rows_bps": dict(self.rows),
            "total_bps": self.total,
            "blocks_per_s": self.blocks_per_s,
            "syllables_per_s": self.syllables_per_s,
            "index_bits": self.index_bits,
        }

    def format_table(self) -> str:
        widths = {
            "code": self.index_bits, "code_duration": RUN_BITS, "f0_mean": MEAN_BITS,
            "f0_slope": SLOPE_BITS, "syllable_duration": DURATION_BITS,
        }
        lines = [f"{'field':<18}{'bits':>6}{'bps':>10}"]
        for name in BITRATE_ROWS:
            lines.append(f"{name:<18}{widths[name]:>6}{self.rows[name]:>10.2f}")
        lines.append(f"{'total':<18}{'':>6}{self.total:>10.2f}")
        return "\n".join(lines)


def measure_bitrate(
    blocks: Sequence[SegmentalBlock],
    codes: Sequence[SyllableCode],
    speech_duration_s: float,
    index_bits: int,
) -> BitRateReport:
    """
    Bit rate per field from actual stream counts.

    Raises:
        TooShort: If the duration is not positive
    """
    if speech_duration_s <= 0:
        raise TooShort(f"Speech duration must be positive, got {speech_duration_s}")
    n_blocks, n_syllables = len(blocks), len(codes)
    rows = {
        "code": n_blocks * index_bits / speech_duration_s,
        "code_duration": n_blocks * RUN_BITS / speech_duration_s,
        "f0_mean": n_syllables * MEAN_BITS / speech_duration_s,
        "f0_slope": n_syllables * SLOPE_BITS / speech_duration_s,
        "syllable_duration": n_syllables * DURATION_BITS / speech_duration_s,
    }
    return BitRateReport(rows, n_blocks / speech_duration_s, n_syllables / speech_duration_s, index_bits)


# Reference stream statistics: 56 effective frames/s at 16 ms, blocks at 46% of
# frames, 6 syllables/s with a 152 ms mean duration
REFERENCE_FRAMES_PER_S = 56.0
REFERENCE_BLOCK_RATIO = 0.46
REFERENCE_SYLLABLES_PER_S = 6.0
REFERENCE_INDEX_BITS = 10


def reference_stream(
    duration_s: float = 100.0, index_bits: int = REFERENCE_INDEX_BITS, seed: int = 0
) -> Tuple[List[SegmentalBlock], List[SyllableCode]]:
    """
    Generate a stream with the reference block and syllable statistics.

    Blocks are runs of 2 or 3 frames with distinct neighbouring indices, and
    syllables alternate between 9 and 10 duration steps.

    Returns:
        Tuple of (blocks, syllable codes)
    """
    rng = np.random.default_rng(seed)
    n_frames = int(round(REFERENCE_FRAMES_PER_S * duration_s))
    n_blocks = int(round(REFERENCE_BLOCK_RATIO * n_frames))
    n_triples = n_frames - 2 * n_blocks
    if not 0 <= n_triples <= n_blocks:
        raise ConfigError("Block statistics cannot be met with runs of 2 and 3 frames")
    run_lengths = np.array([3] * n_triples + [2] * (n_blocks - n_triples))
    rng.shuffle(run_lengths)

    blocks: List[SegmentalBlock] = []
    previous = -1
    for run_len in run_lengths:
        index = int(rng.integers(0, 1 << index_bits))
        while index == previous:
            index = int(rng.integers(0, 1 << index_bits))
        blocks.append(SegmentalBlock(index, int(run_len)))
        previous = index

    n_syllables = int(round(REFERENCE_SYLLABLES_PER_S * duration_s))
    codes = [
        SyllableCode(int(rng.integers(0, N_LEVELS)), int(rng.integers(0, N_LEVELS)), 9 + (i % 2))
        for i in range(n_syllables)
    ]
    logger.debug("Generated %d blocks over %d frames and %d syllables", n_blocks, n_frames, n_syllables)
    return blocks, codes

