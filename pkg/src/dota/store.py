"""Binary audio+transcript archives with memory-mapped random access.

File layout (all integers little-endian):

    bytes 0-7   magic ``DOTAARC1``
    u32         version = 1
    u64         record count
    count times u64 audio_off, u64 audio_len_samples, u64 text_off,
                u64 text_len_bytes, u16 dataset_id (index into table below)
    u16         number of dataset names, then per name u16 byte length
                followed by that many UTF-8 bytes
    payload     int16 audio blobs and UTF-8 transcript blobs, in index order

Offsets are absolute file offsets; audio lengths count int16 samples (two
bytes each). Archives are immutable once written: any number of concurrent
readers is safe, ingestion is single-writer.
"""

from __future__ import annotations

import logging
import mmap
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .resample import resample

log = logging.getLogger(__name__)

MAGIC = b"DOTAARC1"
VERSION = 1
TARGET_RATE = 16000

_HEADER = struct.Struct("<8sIQ")
_ENTRY = struct.Struct("<QQQQH")
_U16 = struct.Struct("<H")


class ArchiveError(Exception):
    """Malformed archive file or invalid access."""


@dataclass
class Record:
    """One stored utterance: 16 kHz mono int16 audio plus its transcript."""

    audio: np.ndarray
    transcript: str
    dataset_id: str


@dataclass
class ArchiveIndex:
    """Parsed index block of an archive."""

    audio_off: np.ndarray
    audio_len: np.ndarray  # in int16 samples
    text_off: np.ndarray
    text_len: np.ndarray  # in bytes
    dataset_code: np.ndarray
    dataset_names: list[str]

    def __len__(self) -> int:
        return len(self.audio_off)


@dataclass(frozen=True)
class SamplingPlan:
    """Per-dataset epoch multiplicity: a weight-w dataset contributes w
    logical copies of each record per epoch."""

    weights: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for name, w in self.weights.items():
            if not isinstance(w, int) or w < 1:
                raise ValueError(f"weight for {name!r} must be a positive integer, got {w!r}")


def _pcm_to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float64)
    raise ValueError(f"unsupported PCM dtype {data.dtype}")


def float_to_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 32768.0), -32768, 32767).astype(np.int16)


def load_audio_int16(path, target_rate: int = TARGET_RATE) -> np.ndarray:
    """Decode a WAV file to mono int16 at ``target_rate``.

    Already-conforming files (mono int16 at the target rate) pass through
    bit-exactly. Everything else is downmixed by channel averaging, then
    polyphase-resampled.
    """
    rate, data = wavfile.read(path)
    if data.ndim == 2 and data.shape[1] == 1:
        data = data[:, 0]
    if data.ndim == 1 and data.dtype == np.int16 and rate == target_rate:
        return data.copy()
    x = _pcm_to_float(data)
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise ValueError(f"unsupported audio shape {data.shape}")
    if rate != target_rate:
        x = resample(x, rate, target_rate)
    return float_to_int16(np.clip(x, -1.0, 1.0))


class ArchiveWriter:
    """Single-writer archive builder; payload is staged in a temp file."""

    def __init__(self, path):
        self.path = os.fspath(path)
        out_dir = os.path.dirname(self.path) or "."
        fd, self._tmp_path = tempfile.mkstemp(prefix=".payload-", dir=out_dir)
        self._payload = os.fdopen(fd, "wb")
        self._pos = 0
        self._entries: list[tuple[int, int, int, int, int]] = []
        self._datasets: dict[str, int] = {}

    def add(self, audio: np.ndarray, transcript: str, dataset_id: str) -> None:
        audio = np.ascontiguousarray(audio, dtype=np.int16)
        if audio.ndim != 1:
            raise ValueError("audio must be a 1-D int16 array")
        if "\x00" in transcript:
            raise ValueError("transcript contains a NUL byte")
        code = self._datasets.get(dataset_id)
        if code is None:
            code = len(self._datasets)
            if code > 0xFFFF:
                raise ArchiveError("too many distinct dataset ids (max 65536)")
            self._datasets[dataset_id] = code
        text = transcript.encode("utf-8")
        audio_off = self._pos
        self._payload.write(audio.astype("<i2").tobytes())
        self._pos += 2 * len(audio)
        text_off = self._pos
        self._payload.write(text)
        self._pos += len(text)
        self._entries.append((audio_off, len(audio), text_off, len(text), code))

    def finalize(self) -> ArchiveIndex:
        self._payload.close()
        names = list(self._datasets)
        table = bytearray(_U16.pack(len(names)))
        for name in names:
            nb = name.encode("utf-8")
            table += _U16.pack(len(nb)) + nb
        base = _HEADER.size + _ENTRY.size * len(self._entries) + len(table)
        with open(self.path, "wb") as out:
            out.write(_HEADER.pack(MAGIC, VERSION, len(self._entries)))
            for a_off, a_len, t_off, t_len, code in self._entries:
                out.write(_ENTRY.pack(base + a_off, a_len, base + t_off, t_len, code))
            out.write(table)
            with open(self._tmp_path, "rb") as payload:
                while True:
                    chunk = payload.read(1 << 20)
                    if not chunk:
                        break
                    out.write(chunk)
        os.unlink(self._tmp_path)
        entries = np.array(self._entries, dtype=np.uint64).reshape(-1, 5)
        return ArchiveIndex(
            audio_off=entries[:, 0] + base,
            audio_len=entries[:, 1],
            text_off=entries[:, 2] + base,
            text_len=entries[:, 3],
            dataset_code=entries[:, 4].astype(np.uint16),
            dataset_names=names,
        )

    def abort(self) -> None:
        self._payload.close()
        if os.path.exists(self._tmp_path):
            os.unlink(self._tmp_path)


def ingest(sources, out_path, target_rate: int = TARGET_RATE) -> ArchiveIndex:
    """Ingest (audio file, transcript, dataset_id) triples into an archive.

    Audio is resampled to 16 kHz mono int16; transcripts are stored verbatim.
    A file that fails to decode is logged and skipped; an unwritable output
    path raises.
    """
    writer = ArchiveWriter(out_path)
    try:
        for audio_path, transcript, dataset_id in sources:
            try:
                audio = load_audio_int16(audio_path, target_rate)
                writer.add(audio, transcript, dataset_id)
            except (OSError, ValueError) as exc:
                log.warning("skipping %s: %s", audio_path, exc)
        return writer.finalize()
    except BaseException:
        writer.abort()
        raise


class Archive:
    """Memory-mapped reader over an ingested archive."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self._file = open(self.path, "rb")
        self._mm = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)
        try:
            self.index = self._parse_index()
        except BaseException:
            self.close()
            raise

    def _parse_index(self) -> ArchiveIndex:
        mm = self._mm
        if len(mm) < _HEADER.size:
            raise ArchiveError(f"{self.path}: file too small to be an archive")
        magic, version, count = _HEADER.unpack_from(mm, 0)
        if magic != MAGIC:
            raise ArchiveError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise ArchiveError(f"{self.path}: unsupported version {version}")
        pos = _HEADER.size
        need = pos + count * _ENTRY.size + _U16.size
        if len(mm) < need:
            raise ArchiveError(f"{self.path}: truncated index")
        entries = np.frombuffer(
            mm, dtype=np.dtype([("ao", "<u8"), ("al", "<u8"), ("to", "<u8"), ("tl", "<u8"), ("ds", "<u2")]),
            count=count, offset=pos,
        )
        pos += count * _ENTRY.size
        (n_names,) = _U16.unpack_from(mm, pos)
        pos += _U16.size
        names = []
        for _ in range(n_names):
            (nb,) = _U16.unpack_from(mm, pos)
            pos += _U16.size
            names.append(bytes(mm[pos : pos + nb]).decode("utf-8"))
            pos += nb
        index = ArchiveIndex(
            audio_off=entries["ao"].astype(np.int64),
            audio_len=entries["al"].astype(np.int64),
            text_off=entries["to"].astype(np.int64),
            text_len=entries["tl"].astype(np.int64),
            dataset_code=entries["ds"].astype(np.int64),
            dataset_names=names,
        )
        self._validate(index, pos)
        return index

    def _validate(self, index: ArchiveIndex, payload_base: int) -> None:
        if len(index) == 0:
            return
        size = len(self._mm)
        a_end = index.audio_off + 2 * index.audio_len
        t_end = index.text_off + index.text_len
        prev_end = np.concatenate([[payload_base], t_end[:-1]])
        ok = (
            (prev_end <= index.audio_off)
            & (a_end == index.text_off)
            & (t_end <= size)
        )
        if not np.all(ok):
            raise ArchiveError(f"{self.path}: corrupt index entry {int(np.argmin(ok))}")
        if np.any(index.dataset_code >= len(index.dataset_names)):
            raise ArchiveError(f"{self.path}: index references unknown dataset code")

    def __len__(self) -> int:
        return len(self.index)

    def dataset_of(self, i: int) -> str:
        return self.index.dataset_names[int(self.index.dataset_code[i])]

    @property
    def dataset_names(self) -> list[str]:
        return list(self.index.dataset_names)

    def read_record(self, i: int) -> Record:
        """Return record ``i`` bit-exactly as ingested."""
        if not 0 <= i < len(self):
            raise IndexError(f"record index {i} out of range [0, {len(self)})")
        audio = np.frombuffer(
            self._mm, dtype="<i2", count=int(self.index.audio_len[i]), offset=int(self.index.audio_off[i])
        ).copy()  # a view would pin the mmap open
        text = bytes(
            self._mm[int(self.index.text_off[i]) : int(self.index.text_off[i]) + int(self.index.text_len[i])]
        ).decode("utf-8")
        return Record(audio=audio, transcript=text, dataset_id=self.dataset_of(i))

    def indices_by_dataset(self) -> dict[str, np.ndarray]:
        return {
            name: np.nonzero(self.index.dataset_code == code)[0]
            for code, name in enumerate(self.index.dataset_names)
        }

    def close(self) -> None:
        self._mm.close()
        self._file.close()

    def __enter__(self) -> "Archive":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def epoch_schedule(plan: SamplingPlan, archives: list[Archive]) -> list[tuple[int, int]]:
    """Deterministic shuffled epoch over all archives.

    Each record of a weight-w dataset appears exactly w times (weight
    defaults to 1). Returns (archive position, record index) pairs; the
    shuffle depends only on ``plan.seed``.
    """
    known = {name for arc in archives for name in arc.index.dataset_names}
    unknown = set(plan.weights) - known
    if unknown:
        raise ValueError(f"sampling plan references unknown dataset ids: {sorted(unknown)}")
    parts = []
    for pos, arc in enumerate(archives):
        w_by_code = np.array(
            [plan.weights.get(name, 1) for name in arc.index.dataset_names], dtype=np.int64
        )
        if len(arc) == 0:
            continue
        reps = w_by_code[arc.index.dataset_code]
        rec = np.repeat(np.arange(len(arc), dtype=np.int64), reps)
        parts.append(np.stack([np.full_like(rec, pos), rec], axis=1))
    if not parts:
        return []
    entries = np.concatenate(parts, axis=0)
    perm = np.random.default_rng(plan.seed).permutation(len(entries))
    return [(int(a), int(r)) for a, r in entries[perm]]
