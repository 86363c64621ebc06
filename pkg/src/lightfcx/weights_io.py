"""Binary weights container.

Little-endian layout:

    magic     4 bytes  b"LFCX"
    version   u32      currently 1
    count     u32      number of entries
    entry:
        name_len  u16
        name      UTF-8 bytes
        dtype     u8   0 = float32
        rank      u8
        extents   rank * u32
        payload   prod(extents) * f32

Entries are written sorted by name. Values are stored as float32 and widened
to float64 on load. The loader checks magic, version, dtype and that the file
length matches exactly what the header promises.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"LFCX"
VERSION = 1
DTYPE_F32 = 0


def write_entries(path, arrays):
    """Write a name -> float array mapping to `path`."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_entries(path):
    """Read the container back as name -> float64 array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read weights file {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a weights container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        if pos + 2 > len(blob):
            raise DataError(f"{path}: truncated entry header")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 2 > len(blob):
            raise DataError(f"{path}: truncated entry {name}")
        dtype, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if dtype != DTYPE_F32:
            raise DataError(f"{path}: entry {name} has unknown dtype {dtype}")
        extents = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(extents)) if rank else 1
        nbytes = 4 * n
        if pos + nbytes > len(blob):
            raise DataError(f"{path}: payload of {name} exceeds file length")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(extents)
        out[name] = arr.astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes after last entry")
    return out


def save_weights(store, path):
    """Serialize a ParamStore (parameters and buffers) to `path`."""
    write_entries(path, store.state_arrays())


def load_weights(store, path, ignore_prefixes=(), allow_missing=()):
    """Load a container into a ParamStore; shapes must match exactly."""
    store.load_state(read_entries(path), ignore_prefixes=ignore_prefixes,
                     allow_missing=allow_missing)
