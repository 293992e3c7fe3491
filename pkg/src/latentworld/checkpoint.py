"""Binary checkpoint container.

Layout: magic ``VJW2``, format version u32, then records sorted by name.
Each record: name length u32, UTF-8 name, dtype code u8 (0=f32, 1=u8,
2=i64), rank u32, extents as u64s, raw little-endian payload. Everything is
fixed-endian and unpadded, so round trips are bitwise and files are portable.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import BadMagicError, BadVersionError, ConfigError, TruncatedFileError

MAGIC = b"VJW2"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1, np.dtype(np.int64): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i8")}


def save_checkpoint(records: dict[str, np.ndarray], path: str) -> None:
    """Write records sorted by name; the write is atomic via rename."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(records):
        arr = np.ascontiguousarray(records[name])
        if arr.dtype not in _DTYPE_CODES:
            raise ConfigError(f"record {name}: dtype {arr.dtype} not in (float32, uint8, int64)")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BI", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(le.tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncatedFileError(f"{self.path}: truncated at byte {self.off} (wanted {n} more)")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.off


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    """Read all records; corrupt magic/version/truncation raise distinct errors."""
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    if reader.remaining < 4 or reader.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic; not a checkpoint file")
    version = struct.unpack("<I", reader.take(4))[0]
    if version != VERSION:
        raise BadVersionError(f"{path}: unknown format version {version}")
    records: dict[str, np.ndarray] = {}
    while reader.remaining:
        name_len = struct.unpack("<I", reader.take(4))[0]
        name = reader.take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BI", reader.take(5))
        if code not in _CODE_DTYPES:
            raise TruncatedFileError(f"{path}: record {name} has unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank)) if rank else ()
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(count * dtype.itemsize)
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
        records[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return records
