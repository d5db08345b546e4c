"""Embedding sequence stores and pair manifests.

On disk, embedding sequences live in CESF v1 files: a fixed little-endian
binary layout holding float32 values.  In memory everything is widened to
float64 so downstream gradient checks have full headroom.

CESF v1 layout::

    magic   4 bytes  b"CESF"
    version u8       1
    dtype   u8       0 (float32; only value in v1)
    reserved u16     0
    dim     u32      shared feature dimension D
    count   u64      number of records
    then per record:
        id_len   u32
        id       id_len bytes, UTF-8
        modality u8   (0 = text, 1 = audio)
        steps    u32  timestep count T
        values   T * D little-endian float32, timestep-major

Pair manifests are JSONL files, one ``{"text_id", "audio_id", "split"}``
object per line with split in {"train", "eval"}.

Stores are immutable after load and safe to share across threads.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateId,
    FormatError,
    IoError,
    MissingRecord,
    ModalityMismatch,
)

MAGIC = b"CESF"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBHIQ")  # magic, version, dtype, reserved, dim, count
_REC_META = struct.Struct("<BI")  # modality, steps
_U32 = struct.Struct("<I")

VALID_SPLITS = ("train", "eval")


class Modality(IntEnum):
    TEXT = 0
    AUDIO = 1


@dataclass(frozen=True)
class EmbeddingRecord:
    """One modality item: an id plus a T x D float sequence (T = 1 for text)."""

    id: str
    modality: Modality
    data: np.ndarray  # (T, D) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"record {self.id!r}: data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"record {self.id!r}: empty axis in shape {arr.shape}")
        if self.modality == Modality.TEXT and arr.shape[0] != 1:
            raise DataError(
                f"record {self.id!r}: text records must have exactly one timestep, got {arr.shape[0]}"
            )
        if not np.isfinite(arr).all():
            raise DataError(f"record {self.id!r}: non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def steps(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.modality == other.modality
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __hash__(self):
        return hash((self.id, self.modality, self.data.shape))


class EmbeddingStore:
    """An ordered, id-indexed collection of records sharing one dimension."""

    def __init__(self, records: Sequence[EmbeddingRecord]):
        if not records:
            raise DataError("store must contain at least one record")
        dim = records[0].dim
        index: dict[str, int] = {}
        for pos, rec in enumerate(records):
            if rec.dim != dim:
                raise DimensionMismatch(
                    f"record {rec.id!r} has dim {rec.dim}, store has dim {dim}"
                )
            if rec.id in index:
                raise DuplicateId(f"duplicate record id {rec.id!r}")
            index[rec.id] = pos
        self._records = list(records)
        self._index = index
        self.dim = dim

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(self._records)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return self._records == other._records

    @property
    def records(self) -> list[EmbeddingRecord]:
        return list(self._records)

    def get(self, rec_id: str) -> EmbeddingRecord:
        try:
            return self._records[self._index[rec_id]]
        except KeyError:
            raise MissingRecord(f"no record with id {rec_id!r}") from None

    def ids(self) -> list[str]:
        return [r.id for r in self._records]


def write_store(records: Sequence[EmbeddingRecord], path: str | Path) -> int:
    """Write records as a CESF v1 file.  Returns the byte count written.

    Values are quantised to float32; the byte stream is fixed little-endian
    regardless of host endianness.
    """
    store = EmbeddingStore(records)  # validates dims / duplicate ids
    chunks = [_HEADER.pack(MAGIC, VERSION, DTYPE_F32, 0, store.dim, len(store))]
    for rec in store:
        ident = rec.id.encode("utf-8")
        chunks.append(_U32.pack(len(ident)))
        chunks.append(ident)
        chunks.append(_REC_META.pack(int(rec.modality), rec.steps))
        chunks.append(rec.data.astype("<f4").tobytes(order="C"))
    blob = b"".join(chunks)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


class _Cursor:
    """Sequential reader over a byte blob with truncation checking."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated file (needed {n} bytes at offset {self.pos}, "
                f"have {len(self.blob) - self.pos})"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def read_store(path: str | Path) -> EmbeddingStore:
    """Read and validate a CESF v1 file, widening values to float64."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    cur = _Cursor(blob, path)
    magic, version, dtype, _reserved, dim, count = _HEADER.unpack(cur.take(_HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if dim < 1:
        raise FormatError(f"{path}: dimension must be positive, got {dim}")
    records = []
    for _ in range(count):
        (id_len,) = _U32.unpack(cur.take(_U32.size))
        try:
            ident = cur.take(id_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: record id is not valid UTF-8") from exc
        modality_code, steps = _REC_META.unpack(cur.take(_REC_META.size))
        if modality_code not in (Modality.TEXT, Modality.AUDIO):
            raise FormatError(f"{path}: record {ident!r} has unknown modality {modality_code}")
        if steps < 1:
            raise FormatError(f"{path}: record {ident!r} declares {steps} timesteps")
        raw = cur.take(steps * dim * 4)
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(steps, dim)
        records.append(EmbeddingRecord(ident, Modality(modality_code), values))
    if cur.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - cur.pos} trailing bytes after last record")
    return EmbeddingStore(records)


@dataclass(frozen=True)
class PairEntry:
    text_id: str
    audio_id: str
    split: str


@dataclass
class PairManifest:
    entries: list[PairEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PairEntry]:
        return iter(self.entries)


def load_manifest(path: str | Path) -> PairManifest:
    """Parse a JSONL pair manifest, preserving file order.

    Raises FormatError with the 1-based line number on any malformed line.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    entries: list[PairEntry] = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise FormatError(f"{path}: line {lineno}: expected a JSON object")
        try:
            text_id, audio_id, split = obj["text_id"], obj["audio_id"], obj["split"]
        except KeyError as exc:
            raise FormatError(f"{path}: line {lineno}: missing key {exc.args[0]!r}") from None
        if split not in VALID_SPLITS:
            raise FormatError(
                f"{path}: line {lineno}: unknown split {split!r} (expected one of {VALID_SPLITS})"
            )
        if not isinstance(text_id, str) or not isinstance(audio_id, str):
            raise FormatError(f"{path}: line {lineno}: ids must be strings")
        key = (text_id, audio_id)
        if key in seen:
            raise FormatError(f"{path}: line {lineno}: duplicate pair {key!r}")
        seen.add(key)
        entries.append(PairEntry(text_id, audio_id, split))
    return PairManifest(entries)


def write_manifest(manifest: PairManifest, path: str | Path) -> None:
    lines = [
        json.dumps(
            {"text_id": e.text_id, "audio_id": e.audio_id, "split": e.split},
            sort_keys=True,
        )
        for e in manifest.entries
    ]
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def resolve_pairs(
    manifest: PairManifest,
    text_store: EmbeddingStore,
    audio_store: EmbeddingStore,
    split: str,
) -> list[tuple[EmbeddingRecord, EmbeddingRecord]]:
    """Resolve manifest entries of one split into (text, audio) record pairs.

    Output order follows manifest order.  Modalities are enforced: the text
    side must be a text record and the audio side an audio record.
    """
    if split not in VALID_SPLITS:
        raise FormatError(f"unknown split {split!r} (expected one of {VALID_SPLITS})")
    pairs = []
    for entry in manifest:
        if entry.split != split:
            continue
        text_rec = text_store.get(entry.text_id)
        audio_rec = audio_store.get(entry.audio_id)
        if text_rec.modality != Modality.TEXT:
            raise ModalityMismatch(f"record {entry.text_id!r} is not a text record")
        if audio_rec.modality != Modality.AUDIO:
            raise ModalityMismatch(f"record {entry.audio_id!r} is not an audio record")
        pairs.append((text_rec, audio_rec))
    return pairs
