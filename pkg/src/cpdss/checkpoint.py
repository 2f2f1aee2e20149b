"""Named-array container used for checkpoints, latent caches and embedding files.

Layout (little-endian):
    b"CPDS" | version u32 | config_len u32 | config JSON (UTF-8)
    then entries until EOF:
    name_len u32 | name (UTF-8) | rank u32 | dims u64 * rank | float32 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CPDS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_text(config) -> str:
    if isinstance(config, str):
        return config
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def dump_container(config, arrays: dict[str, np.ndarray]) -> bytes:
    text = config_text(config).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def parse_container(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a CPDS container (bad magic)")
    version, clen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    pos = 12
    text = blob[pos:pos + clen].decode("utf-8")
    pos += clen
    arrays: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        if pos + 4 * count > len(blob):
            raise CheckpointError(f"truncated payload for {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
        pos += 4 * count
        if name in arrays:
            raise CheckpointError(f"duplicate entry {name!r}")
        arrays[name] = arr
    return text, arrays


def save_container(path, config, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_container(config, arrays))


def load_container(path) -> tuple[str, dict[str, np.ndarray]]:
    return parse_container(Path(path).read_bytes())
