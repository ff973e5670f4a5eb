"""Binary embedding-record serialization.

The detector package reads the same format; the layout is duplicated
here on purpose because the two packages talk only through files, so
the byte contract is the interface, not an import.

Layout, all little-endian: 4-byte magic "MGPR", u32 version (1), u32
feature dimension d, u32 flags (1 = token matrices, 2 = sentence
offsets).  Then per record: u16-length-prefixed UTF-8 id, u8 label,
u16-prefixed domain, u16-prefixed generator, u32 t_num, u32 s_num,
s_num u32 sentence offsets when flagged, and the payload as f32 values
(t_num * d for token matrices).  This extractor always emits token
matrices with offsets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MGPR"
VERSION = 1
FLAG_TOKENS = 1
FLAG_OFFSETS = 2


class FormatError(ValueError):
    """File or record does not satisfy the byte contract."""


class DimensionMismatch(Exception):
    """Existing file expects a different feature dimension."""


@dataclass
class TokenRecord:
    id: str
    label: int
    domain: str
    generator: str
    matrix: np.ndarray
    offsets: tuple[int, ...]

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float32))
        if self.matrix.ndim != 2 or self.matrix.size == 0:
            raise FormatError("matrix must be 2-D and nonempty")
        if self.label not in (0, 1):
            raise FormatError("label must be 0 or 1")
        self.offsets = tuple(int(v) for v in self.offsets)
        if not self.offsets or self.offsets[0] != 0:
            raise FormatError("offsets must start at 0")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise FormatError("offsets must be strictly increasing")
        if self.offsets[-1] >= self.t_num:
            raise FormatError("offsets must lie below t_num")

    @property
    def t_num(self) -> int:
        return self.matrix.shape[0]

    @property
    def s_num(self) -> int:
        return len(self.offsets)

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def _pack_str(value: str) -> bytes:
    blob = value.encode("utf-8")
    if len(blob) > 0xFFFF:
        raise FormatError("string field longer than 65535 bytes")
    return struct.pack("<H", len(blob)) + blob


def _record_bytes(record: TokenRecord, d: int) -> bytes:
    if record.d != d:
        raise DimensionMismatch(f"record is {record.d}-dimensional, file wants {d}")
    parts = [
        _pack_str(record.id),
        struct.pack("<B", record.label),
        _pack_str(record.domain),
        _pack_str(record.generator),
        struct.pack("<II", record.t_num, record.s_num),
        np.asarray(record.offsets, dtype="<u4").tobytes(),
        record.matrix.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def header_bytes(d: int) -> bytes:
    return MAGIC + struct.pack("<III", VERSION, d, FLAG_TOKENS | FLAG_OFFSETS)


def write_corpus(path, d: int, records) -> None:
    with open(path, "wb") as fh:
        fh.write(header_bytes(d))
        for record in records:
            fh.write(_record_bytes(record, d))


def read_file_dim(path) -> int:
    """Feature dimension promised by an existing corpus file's header."""
    with open(path, "rb") as fh:
        head = fh.read(16)
    if len(head) != 16 or head[:4] != MAGIC:
        raise FormatError(f"not a record file: {path}")
    version, d, flags = struct.unpack("<III", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if flags != FLAG_TOKENS | FLAG_OFFSETS:
        raise FormatError("file does not hold token matrices with offsets")
    return d


def append_corpus(path, d: int, records) -> None:
    """Extend an existing corpus, or create it when absent."""
    if not Path(path).exists():
        write_corpus(path, d, records)
        return
    existing = read_file_dim(path)
    if existing != d:
        raise DimensionMismatch(f"file holds d={existing}, new records have d={d}")
    with open(path, "ab") as fh:
        for record in records:
            fh.write(_record_bytes(record, d))


def _take(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError("truncated stream")
    return data


def _unpack_str(fh) -> str:
    (length,) = struct.unpack("<H", _take(fh, 2))
    return _take(fh, length).decode("utf-8")


def read_corpus(path) -> tuple[int, list[TokenRecord]]:
    d = read_file_dim(path)
    records = []
    with open(path, "rb") as fh:
        fh.seek(16)
        while True:
            probe = fh.read(2)
            if not probe:
                return d, records
            if len(probe) != 2:
                raise FormatError("truncated stream")
            (id_len,) = struct.unpack("<H", probe)
            rec_id = _take(fh, id_len).decode("utf-8")
            (label,) = struct.unpack("<B", _take(fh, 1))
            domain = _unpack_str(fh)
            generator = _unpack_str(fh)
            t_num, s_num = struct.unpack("<II", _take(fh, 8))
            offsets = tuple(
                int(v) for v in np.frombuffer(_take(fh, 4 * s_num), dtype="<u4")
            )
            raw = _take(fh, 4 * t_num * d)
            matrix = np.frombuffer(raw, dtype="<f4").reshape(t_num, d)
            records.append(
                TokenRecord(
                    id=rec_id,
                    label=label,
                    domain=domain,
                    generator=generator,
                    matrix=matrix,
                    offsets=offsets,
                )
            )
