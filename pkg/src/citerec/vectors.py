"""Keyed float32 vector collections and the CVEC on-disk format.

CVEC layout: magic ``CVEC1\\n``, little-endian u32 dimension, then repeated
records of [u16 key length, UTF-8 key bytes, dim little-endian f32 values].
EOF terminates the record stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, NotFoundError, ValidationError

MAGIC = b"CVEC1\n"


@dataclass
class EmbeddingMatrix:
    """Immutable set of key-aligned float32 rows."""

    dim: int
    keys: list[str]
    vectors: np.ndarray  # float32, shape (len(keys), dim)
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape != (len(self.keys), self.dim):
            raise ValidationError(
                f"vector array shape {self.vectors.shape} does not match "
                f"{len(self.keys)} keys of dim {self.dim}"
            )
        if not np.isfinite(self.vectors).all():
            raise ValidationError("embedding matrix contains NaN or Inf entries")
        self._index = {}
        for i, key in enumerate(self.keys):
            if key in self._index:
                raise ValidationError(f"duplicate embedding key: {key!r}")
            self._index[key] = i

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def row(self, key: str) -> np.ndarray:
        try:
            return self.vectors[self._index[key]]
        except KeyError:
            raise NotFoundError(f"no vector for key {key!r}") from None

    def row_index(self, key: str) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise NotFoundError(f"no vector for key {key!r}") from None


def write_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", matrix.dim))
        for key, row in zip(matrix.keys, matrix.vectors):
            key_bytes = key.encode("utf-8")
            if len(key_bytes) > 0xFFFF:
                raise ValidationError(f"key too long for CVEC ({len(key_bytes)} bytes)")
            fh.write(struct.pack("<H", len(key_bytes)))
            fh.write(key_bytes)
            fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read a CVEC file, validating magic, dimensions and finiteness."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(4)
        if len(header) != 4:
            raise FormatError(f"{path}: truncated dimension header")
        (dim,) = struct.unpack("<I", header)
        if dim == 0:
            raise FormatError(f"{path}: zero dimension")
        keys: list[str] = []
        rows: list[np.ndarray] = []
        row_bytes = 4 * dim
        while True:
            len_field = fh.read(2)
            if len(len_field) == 0:
                break
            if len(len_field) != 2:
                raise FormatError(f"{path}: truncated key length at record {len(keys)}")
            (key_len,) = struct.unpack("<H", len_field)
            key_raw = fh.read(key_len)
            if len(key_raw) != key_len:
                raise FormatError(f"{path}: truncated key at record {len(keys)}")
            payload = fh.read(row_bytes)
            if len(payload) != row_bytes:
                raise FormatError(
                    f"{path}: truncated vector for key {key_raw!r} "
                    f"(got {len(payload)} of {row_bytes} bytes)"
                )
            keys.append(key_raw.decode("utf-8"))
            rows.append(np.frombuffer(payload, dtype="<f4"))
    vectors = np.vstack(rows) if rows else np.empty((0, dim), dtype=np.float32)
    return EmbeddingMatrix(dim=dim, keys=keys, vectors=vectors)
