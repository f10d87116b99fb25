"""SleepNet checkpoints.

Layout (all integers little-endian)::

    b"SLPN"  uint32 version
    uint32 n  + n bytes   config, canonical key=value text
    uint32 n  + n bytes   provenance, JSON with sorted keys
    uint32 tensor count
    per tensor, in name order:
        uint16 n + n bytes name   uint8 ndim   ndim x uint32 dims
        prod(dims) x float32
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sleepnet import SleepNet, SleepNetConfig

MAGIC = b"SLPN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: SleepNetConfig
    state: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: SleepNet, **provenance) -> "Checkpoint":
        state = {k: np.array(v, dtype=np.float32) for k, v in model.state_dict().items()}
        return cls(model.config, state, dict(provenance))

    def build(self) -> SleepNet:
        model = SleepNet(self.config)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", VERSION))
        for blob in (self.config.to_text().encode(), json.dumps(self.provenance, sort_keys=True, default=_json_default).encode()):
            buf.write(struct.pack("<I", len(blob)))
            buf.write(blob)
        names = sorted(self.state)
        buf.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(self.state[name], dtype="<f4")
            raw = name.encode()
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("checkpoint truncated")
            out = bytes(view[pos : pos + n])
            pos += n
            return out

        if take(4) != MAGIC:
            raise CheckpointError("not a SleepNet checkpoint (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", take(4))
        config = SleepNetConfig.from_text(take(n).decode())
        (n,) = struct.unpack("<I", take(4))
        provenance = json.loads(take(n).decode())
        (count,) = struct.unpack("<I", take(4))
        state = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", take(2))
            name = take(ln).decode()
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            size = int(np.prod(shape, dtype=np.int64))
            state[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        if pos != len(view):
            raise CheckpointError("trailing bytes after checkpoint payload")
        return cls(config, state, provenance)

    def save(self, path: str | Path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")
