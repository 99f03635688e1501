"""Binary checkpoints.

Layout (little-endian)::

    b"CTVTCKPT" | u16 version | u32 count
    count x ( u16 name_len | name utf-8 | u8 dtype (0 = f32) | u32 rank | u32 dims... | payload )
    u32 CRC-32 (IEEE) of everything above
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

from .nn import Module

MAGIC = b"CTVTCKPT"
VERSION = 1
F32 = 0


class CheckpointError(ValueError):
    pass


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BI", F32, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < len(MAGIC) + 10 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch; file is corrupted")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<HI", body, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 6
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2: pos + 2 + n].decode("utf-8")
            pos += 2 + n
            dtype, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            if dtype != F32:
                raise CheckpointError(f"{name}: unknown dtype code {dtype}")
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            if name in out:
                raise CheckpointError(f"duplicate parameter {name!r}")
            out[name] = arr.astype(np.float64)
    except CheckpointError:
        raise
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last parameter")
    return out


def save(model: Module, path: str | Path) -> bytes:
    data = encode({name: p.data for name, p in model.named_parameters()})
    Path(path).write_bytes(data)
    return data


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def load_into(model: Module, path: str | Path) -> None:
    """Copy checkpoint values into ``model``; names and shapes must match exactly."""
    arrays = load(path)
    try:
        model.load_arrays(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc.args[0]) if exc.args else str(exc)) from exc


def git_blob_hash(data: bytes) -> str:
    """The id ``git hash-object`` would give these bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def sha256_of(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return h.hexdigest()
