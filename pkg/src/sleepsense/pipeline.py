"""Preprocessing: 10 s segmentation, strongest-channel pick, Z-scoring, correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthgen import BehaviourClass

EPOCH_SAMPLES = 1000
N_CHANNELS = 6


@dataclass
class Epoch:
    currents: np.ndarray  # (6, 1000) amperes
    label: BehaviourClass
    subject_id: int
    selected_channel: int | None = None

    def __post_init__(self) -> None:
        self.currents = np.asarray(self.currents, dtype=np.float64)
        if self.currents.shape != (N_CHANNELS, EPOCH_SAMPLES):
            raise ValueError(f"epoch must be {N_CHANNELS} x {EPOCH_SAMPLES}, got {self.currents.shape}")
        self.label = BehaviourClass(int(self.label))


def segment(stream: np.ndarray, length: int = EPOCH_SAMPLES) -> list[np.ndarray]:
    """Split a (channels, N) stream into consecutive non-overlapping blocks; the tail is dropped."""
    stream = np.asarray(stream)
    n = stream.shape[-1]
    if n < length:
        raise ValueError(f"stream of {n} samples is shorter than one {length}-sample epoch")
    return [stream[..., i * length : (i + 1) * length] for i in range(n // length)]


def channel_power(epoch: np.ndarray) -> np.ndarray:
    epoch = np.asarray(epoch, dtype=np.float64)
    return np.mean((epoch - epoch.mean(axis=-1, keepdims=True)) ** 2, axis=-1)


def select_channel(epoch: np.ndarray) -> int:
    """Index of the channel with the largest mean-removed power (first one on ties)."""
    return int(np.argmax(channel_power(epoch)))


def zscore(values: np.ndarray) -> np.ndarray:
    """Population Z-score; a constant input (std < 1e-12) maps to zeros."""
    x = np.asarray(values, dtype=np.float64)
    sd = x.std()
    if sd < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError(f"pearson needs two equal-length series of >= 2 samples, got {a.shape} and {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if na == 0 or nb == 0:
        raise ValueError("pearson is undefined for a constant series")
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


def correlation_matrix(epoch: np.ndarray) -> np.ndarray:
    epoch = np.asarray(epoch, dtype=np.float64)
    k = epoch.shape[0]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = pearson(epoch[i], epoch[j])
    return out


def model_input(epoch: np.ndarray) -> tuple[np.ndarray, int]:
    """Strongest channel of a (6, 1000) epoch, Z-scored, and its index."""
    ch = select_channel(epoch)
    return zscore(epoch[ch]), ch


def prepare_inputs(currents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch version of :func:`model_input` for (N, 6, 1000) currents.

    Returns float32 inputs (N, 1000) and the chosen channel per epoch.
    """
    currents = np.asarray(currents, dtype=np.float64)
    if currents.ndim != 3:
        raise ValueError(f"expected (N, channels, samples), got {currents.shape}")
    out = np.empty((currents.shape[0], currents.shape[2]), dtype=np.float32)
    chans = np.empty(currents.shape[0], dtype=np.int64)
    for i, ep in enumerate(currents):
        out[i], chans[i] = model_input(ep)
    return out, chans
