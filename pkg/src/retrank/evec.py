"""EVEC embedding file format.

Little-endian layout:

    magic   "EVEC"  (4 bytes)
    version u32     (=1)
    dim     u32
    count   u64
    normalized u8   (0 or 1)
    count records of:
        id_len  u16
        id      UTF-8 bytes
        vector  dim x f32

Round trips are bit-exact: float rows are written and read as raw
float32 bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import EvecFormatError
from .index import EmbeddingMatrix

MAGIC = b"EVEC"
VERSION = 1
_HEADER = struct.Struct("<4sIIQB")


def save_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m.dim, len(m.ids), 1 if m.normalized else 0))
        for i, id_ in enumerate(m.ids):
            raw = id_.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise EvecFormatError(f"id too long to encode: {id_[:40]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(m.vectors[i].tobytes())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < _HEADER.size:
        raise EvecFormatError("truncated header", offset=len(data))
    magic, version, dim, count, normalized = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EvecFormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise EvecFormatError(f"unsupported version {version}", offset=4)
    if dim == 0:
        raise EvecFormatError("dim must be positive", offset=8)
    if normalized not in (0, 1):
        raise EvecFormatError(f"normalized flag must be 0 or 1, got {normalized}", offset=20)

    offset = _HEADER.size
    row_bytes = 4 * dim
    ids: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        if offset + 2 > len(data):
            raise EvecFormatError(f"truncated id length for record {i}", offset=offset)
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len > len(data):
            raise EvecFormatError(f"truncated id for record {i}", offset=offset)
        try:
            ids.append(data[offset : offset + id_len].decode("utf-8"))
        except UnicodeDecodeError:
            raise EvecFormatError(f"id of record {i} is not valid UTF-8", offset=offset) from None
        offset += id_len
        if offset + row_bytes > len(data):
            raise EvecFormatError(f"truncated vector for record {i}", offset=offset)
        rows[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += row_bytes
    if offset != len(data):
        raise EvecFormatError(f"{len(data) - offset} trailing bytes after last record", offset=offset)

    try:
        return EmbeddingMatrix(dim=dim, ids=tuple(ids), vectors=rows, normalized=bool(normalized))
    except Exception as exc:
        raise EvecFormatError(str(exc)) from None
