"""Flat binary container for named float64 arrays, with a JSON sidecar.

Layout (all little-endian):

    magic   4 bytes   b"PHMC"
    version u32       currently 1
    count   u32       number of arrays
    per array:
        name_len u16, name utf-8 bytes
        rank     u8
        extents  rank x u64
        payload  float64 x prod(extents), row-major

Round-trips are bit-exact; checkpoints and layer parameters both use this
format.  Metadata (dims, seed, init scheme, model config) goes in a JSON
sidecar next to the binary file.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PHMC"
VERSION = 1


class ContainerError(ValueError):
    """Malformed container file."""


def save_arrays(path, arrays: dict) -> None:
    """Write named arrays; ordering follows the dict."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(np.asarray(arr), dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes())


def load_arrays(path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    out = {}
    off = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        out[name] = arr.astype(np.float64, copy=True)
    if off != len(raw):
        raise ContainerError(f"{path}: {len(raw) - off} trailing bytes")
    return out


def save_sidecar(path, meta: dict) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())
