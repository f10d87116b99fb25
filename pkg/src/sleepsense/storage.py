"""Dataset files.

Text variant, one epoch per line after a header line::

    # sleepsense-dataset v1 records=<N> channels=6 samples=1000
    <subject> <class> <selected or -1> <6000 currents, channel-major, %.9g>

Binary variant (little-endian)::

    b"SLPD"  uint32 version  uint32 record count
    per record: int32 subject, int32 class, int32 selected, 6000 x float32

Currents are float32 values; nine significant digits identify a float32
uniquely, so both variants round-trip simulated datasets exactly.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .data import Dataset

TEXT_HEADER = "# sleepsense-dataset v1"
BIN_MAGIC = b"SLPD"
BIN_VERSION = 1
N_VALUES = 6 * 1000


class DatasetFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return "%.9g" % v


def dumps_text(ds: Dataset) -> str:
    lines = [f"{TEXT_HEADER} records={len(ds)} channels=6 samples=1000"]
    flat = ds.currents.reshape(len(ds), N_VALUES)
    for i in range(len(ds)):
        vals = " ".join(map(_fmt, flat[i].tolist()))
        lines.append(f"{int(ds.subjects[i])} {int(ds.labels[i])} {int(ds.selected[i])} {vals}")
    return "\n".join(lines) + "\n"


def loads_text(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TEXT_HEADER):
        raise DatasetFormatError("missing dataset header line")
    try:
        declared = int(dict(kv.split("=") for kv in lines[0][len(TEXT_HEADER):].split())["records"])
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(f"bad header: {lines[0]!r}") from e
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != declared:
        raise DatasetFormatError(f"header declares {declared} records, found {len(body)}")
    n = len(body)
    currents = np.empty((n, N_VALUES))
    meta = np.empty((n, 3), dtype=np.int64)
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 3 + N_VALUES:
            raise DatasetFormatError(f"record {i}: expected {3 + N_VALUES} fields, got {len(parts)}")
        meta[i] = [int(p) for p in parts[:3]]
        currents[i] = np.array(parts[3:], dtype=np.float32)
    _check_meta(meta)
    return Dataset(currents.reshape(n, 6, 1000), meta[:, 1], meta[:, 0], meta[:, 2])


def dumps_binary(ds: Dataset) -> bytes:
    head = BIN_MAGIC + struct.pack("<II", BIN_VERSION, len(ds))
    rec = np.dtype([("subject", "<i4"), ("label", "<i4"), ("selected", "<i4"), ("x", "<f4", (N_VALUES,))])
    arr = np.empty(len(ds), dtype=rec)
    arr["subject"] = ds.subjects
    arr["label"] = ds.labels
    arr["selected"] = ds.selected
    arr["x"] = ds.currents.reshape(len(ds), N_VALUES)
    return head + arr.tobytes()


def loads_binary(data: bytes) -> Dataset:
    if data[:4] != BIN_MAGIC:
        raise DatasetFormatError("not a binary dataset (bad magic)")
    if len(data) < 12:
        raise DatasetFormatError("binary dataset truncated")
    version, n = struct.unpack("<II", data[4:12])
    if version != BIN_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    rec = np.dtype([("subject", "<i4"), ("label", "<i4"), ("selected", "<i4"), ("x", "<f4", (N_VALUES,))])
    if len(data) - 12 != n * rec.itemsize:
        raise DatasetFormatError(f"expected {n} records of {rec.itemsize} bytes, got {len(data) - 12} bytes")
    arr = np.frombuffer(data, dtype=rec, offset=12)
    meta = np.stack([arr["subject"], arr["label"], arr["selected"]], axis=1).astype(np.int64)
    _check_meta(meta)
    return Dataset(arr["x"].astype(np.float64).reshape(n, 6, 1000), meta[:, 1], meta[:, 0], meta[:, 2])


def _check_meta(meta: np.ndarray) -> None:
    if len(meta) and (meta[:, 1].min() < 0 or meta[:, 1].max() > 5):
        raise DatasetFormatError("class code outside 0..5")
    if len(meta) and (meta[:, 2].min() < -1 or meta[:, 2].max() > 5):
        raise DatasetFormatError("selected channel outside -1..5")


def save_dataset(ds: Dataset, path: str | Path) -> str:
    """Write text or binary (``.slpd``) by extension; returns the file's sha256."""
    path = Path(path)
    data = dumps_binary(ds) if path.suffix == ".slpd" else dumps_text(ds).encode()
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] == BIN_MAGIC:
        return loads_binary(data)
    return loads_text(data.decode())


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- sample streams (one 6-channel frame per line) ---------------------------------------

def dumps_stream(currents: np.ndarray) -> str:
    """(6, N) currents -> N text frames of six space-separated values."""
    currents = np.asarray(currents, dtype=np.float64)
    if currents.ndim != 2 or currents.shape[0] != 6:
        raise ValueError(f"expected (6, N) currents, got {currents.shape}")
    return "".join(" ".join(map(_fmt, col)) + "\n" for col in currents.T.tolist())


def parse_frame(line: str) -> np.ndarray | None:
    """Six finite values from one frame line, or ``None`` if it is malformed."""
    parts = line.replace(",", " ").split()
    if len(parts) != 6:
        return None
    try:
        v = np.array([float(p) for p in parts])
    except ValueError:
        return None
    return v if np.all(np.isfinite(v)) else None
