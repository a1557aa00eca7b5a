import hashlib
import logging
import struct
from dataclasses import dataclass
from math import ceil, log2
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from phonovoc.utils.errors import ConfigError, CorruptStream, DimensionError, EmptyCorpus
from phonovoc.utils.schemes import get_scheme, scheme_by_id

logger = logging.getLogger(__name__)

CODEBOOK_MAGIC = b"PVCB"
CODEBOOK_VERSION = 1
MAX_RUN_LENGTH = 4


@dataclass(frozen=True)
class SegmentalBlock:
    """A codebook index repeated for run_len consecutive frames."""

    index: int
    run_len: int

    def __post_init__(self):
        if not 1 <= self.run_len <= MAX_RUN_LENGTH:
            raise ValueError(f"run_len must be in [1, {MAX_RUN_LENGTH}], got {self.run_len}")
        if self.index < 0:
            raise ValueError(f"Codebook index must be non-negative, got {self.index}")


class SegmentalCodebook:
    """Ordered unique K-bit phonological patterns."""

    def __init__(self, scheme: str, k: int, patterns: np.ndarray):
        patterns = np.array(patterns, dtype=np.uint8)
        if patterns.ndim != 2 or patterns.shape[0] == 0:
            raise EmptyCorpus("A codebook needs at least one pattern")
        if patterns.shape[1] != k:
            raise DimensionError(f"Patterns have {patterns.shape[1]} bits, expected {k}")
        if np.any(patterns > 1):
            raise ValueError("Patterns must be binary")

        self.scheme = scheme
        self.k = int(k)
        self.patterns = patterns
        self.patterns.setflags(write=False)
        self._index: Dict[bytes, int] = {}
        for index, row in enumerate(patterns):
            key = row.tobytes()
            if key in self._index:
                raise ValueError(f"Duplicate codebook pattern at index {index}")
            self._index[key] = index
        self.content_hash = hashlib.sha256(self._payload()).digest()

    @property
    def size(self) -> int:
        return self.patterns.shape[0]

    @property
    def index_bits(self) -> int:
        return max(1, ceil(log2(self.size)))

    @property
    def short_hash(self) -> bytes:
        """First 8 bytes of the content hash, as carried in stream headers."""
        return self.content_hash[:8]

    def _payload(self) -> bytes:
        header = CODEBOOK_MAGIC + struct.pack(
            "<HBHI", CODEBOOK_VERSION, get_scheme(self.scheme).scheme_id, self.k, self.size
        )
        return header + np.packbits(self.patterns, axis=1).tobytes()

    def index_of(self, pattern: np.ndarray) -> int:
        """Exact-match index, or -1 if the pattern is not in the codebook."""
        return self._index.get(np.asarray(pattern, dtype=np.uint8).tobytes(), -1)

    def __len__(self) -> int:
        return self.size


def build_codebook(binary_frames: Iterable[np.ndarray], scheme: str) -> SegmentalCodebook:
    """
    Collect the unique binary patterns of a training corpus.

    Args:
        binary_frames: Iterable of K-bit vectors or (n, K) arrays
        scheme: Phonological scheme name

    Returns:
        SegmentalCodebook: Patterns ordered by first occurrence

    Raises:
        EmptyCorpus: If there are no frames
        DimensionError: If a frame is not K bits
    """
    k = get_scheme(scheme).k
    seen: Dict[bytes, int] = {}
    unique: List[np.ndarray] = []
    for chunk in binary_frames:
        chunk = np.atleast_2d(np.asarray(chunk, dtype=np.uint8))
        if chunk.size and chunk.shape[1] != k:
            raise DimensionError(f"Frame has {chunk.shape[1]} bits, scheme {scheme} needs {k}")
        for row in chunk:
            key = row.tobytes()
            if key not in seen:
                seen[key] = len(unique)
                unique.append(row.copy())
    if not unique:
        raise EmptyCorpus("Cannot build a codebook from an empty corpus")

    codebook = SegmentalCodebook(scheme, k, np.stack(unique))
    logger.info("Segmental codebook: %d patterns, %d index bits", codebook.size, codebook.index_bits)
    return codebook


def lookup_or_nearest(pattern: np.ndarray, codebook: SegmentalCodebook) -> int:
    """Exact index if present, else the nearest pattern in Hamming distance (lowest index on ties)."""
    pattern = np.asarray(pattern, dtype=np.uint8)
    if pattern.shape != (codebook.k,):
        raise DimensionError(f"Pattern has shape {pattern.shape}, expected ({codebook.k},)")
    exact = codebook.index_of(pattern)
    if exact >= 0:
        return exact
    distances = np.count_nonzero(codebook.patterns != pattern, axis=1)
    return int(np.argmin(distances))


def run_length_blocks(indices: Sequence[int]) -> List[SegmentalBlock]:
    """Maximal runs of equal indices, split into chained blocks of at most 4 frames."""
    blocks: List[SegmentalBlock] = []
    position = 0
    while position < len(indices):
        value = int(indices[position])
        run = 1
        while position + run < len(indices) and int(indices[position + run]) == value:
            run += 1
        position += run
        while run > 0:
            chunk = min(run, MAX_RUN_LENGTH)
            blocks.append(SegmentalBlock(value, chunk))
            run -= chunk
    return blocks


def encode_segmental(binary_frames: np.ndarray, codebook: SegmentalCodebook) -> List[SegmentalBlock]:
    """
    Map binary frames to codebook indices and run-length encode them.

    Returns:
        List[SegmentalBlock]: Run lengths sum to the number of frames
    """
    frames = np.atleast_2d(np.asarray(binary_frames, dtype=np.uint8))
    if frames.size == 0:
        return []
    return run_length_blocks([lookup_or_nearest(row, codebook) for row in frames])


def expand_indices(blocks: Sequence[SegmentalBlock], codebook: SegmentalCodebook) -> List[int]:
    indices: List[int] = []
    for block in blocks:
        if not 0 <= block.index < codebook.size:
            raise CorruptStream(f"Codebook index {block.index} out of range (size {codebook.size})")
        indices.extend([block.index] * block.run_len)
    return indices


def decode_segmental(blocks: Sequence[SegmentalBlock], codebook: SegmentalCodebook) -> np.ndarray:
    """
    Expand blocks back to a (n_frames, K) binary matrix.

    Raises:
        CorruptStream: If a block references an index outside the codebook
    """
    indices = expand_indices(blocks, codebook)
    if not indices:
        return np.zeros((0, codebook.k), dtype=np.uint8)
    return codebook.patterns[np.array(indices)].copy()


def save_codebook(codebook: SegmentalCodebook, path: Union[str, Path]) -> Path:
    """Write magic, version, scheme id, K, size, packed patterns, then the SHA-256 of all preceding bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(codebook._payload() + codebook.content_hash)
    return path


def load_codebook(path: Union[str, Path]) -> SegmentalCodebook:
    """
    Read a codebook file and verify its content hash.

    Raises:
        ConfigError: If the file does not exist
        CorruptStream: If the file is malformed or its hash does not match
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Missing model file: {path}")
    data = path.read_bytes()
    if data[:4] != CODEBOOK_MAGIC:
        raise CorruptStream(f"Not a segmental codebook: {path}")

    header_size = 4 + struct.calcsize("<HBHI")
    if len(data) < header_size:
        raise CorruptStream(f"Truncated codebook: {path}")
    version, scheme_id, k, size = struct.unpack_from("<HBHI", data, 4)
    if version != CODEBOOK_VERSION:
        raise CorruptStream(f"Unsupported codebook version {version}: {path}")

    row_bytes = (k + 7) // 8
    body_end = header_size + size * row_bytes
    if len(data) != body_end + 32:
        raise CorruptStream(f"Codebook size mismatch: {path}")
    if hashlib.sha256(data[:body_end]).digest() != data[body_end:]:
        raise CorruptStream(f"Codebook hash mismatch: {path}")

    packed = np.frombuffer(data[header_size:body_end], dtype=np.uint8).reshape(size, row_bytes)
    patterns = np.unpackbits(packed, axis=1)[:, :k]
    try:
        scheme = scheme_by_id(scheme_id).name
    except ValueError as e:
        raise CorruptStream(f"{e}: {path}")
    return SegmentalCodebook(scheme, k, patterns)
