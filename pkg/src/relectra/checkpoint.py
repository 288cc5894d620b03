"""Binary named-tensor checkpoints.

Layout (all integers little-endian)::

    b"RLCT" | version u32 | record count u32
    repeated: name length u16 | UTF-8 name | rank u8 | dims u32 * rank | float32 payload

Values are stored as 32-bit floats. Non-float state (step counter, RNG words)
is carried in float32 records too: small integers are exact, and RNG words
are bit-cast so the raw bytes survive unchanged.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

MAGIC = b"RLCT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(records: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(records)))
    for name, arr in records.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"record name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"rank {arr.ndim} too large for record {name}")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        if arr.ndim:
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            nbytes = 4 * size
            if pos + nbytes > len(blob):
                raise CheckpointError(f"truncated payload for record {name}")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).astype(np.float32)
            pos += nbytes
            out[name] = arr.reshape(dims)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return out


def save(path: Union[str, Path], records: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(records))


def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def pack_words(words) -> np.ndarray:
    """Bit-cast unsigned 32-bit words into a float32 array (lossless)."""
    return np.asarray(words, dtype=np.uint32).view(np.float32)


def unpack_words(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float32).view(np.uint32)


def rng_to_words(rng: np.random.Generator) -> np.ndarray:
    """Serialise a PCG64 generator state into 32-bit words."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError("only PCG64 generators can be checkpointed")
    vals = [st["state"]["state"], st["state"]["inc"], st["has_uint32"], st["uinteger"]]
    words = []
    for v, width in zip(vals, (4, 4, 1, 1)):
        for k in range(width):
            words.append((int(v) >> (32 * k)) & 0xFFFFFFFF)
    return pack_words(words)


def rng_from_words(arr: np.ndarray) -> np.random.Generator:
    w = [int(x) for x in unpack_words(arr)]

    def join(chunk):
        return sum(v << (32 * k) for k, v in enumerate(chunk))

    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": join(w[0:4]), "inc": join(w[4:8])},
        "has_uint32": w[8],
        "uinteger": w[9],
    }
    return np.random.Generator(bg)
