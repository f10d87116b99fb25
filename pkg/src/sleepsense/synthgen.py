"""Synthetic laryngeal-vibration epochs for the six sleep behaviours.

Each class is built from a breathing carrier plus a class-specific event
(snore bursts, grinding bursts, a central pause, an obstructed window).
Event locations are returned in ``VibrationTrace.meta`` as sample index
ranges so that callers can check them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy import signal

RATE = 100.0
EPOCH_SAMPLES = 1000
RESP_RATE_RANGE = (0.15, 0.40)
AMPLITUDE_RANGE = (0.5, 2.0)
JITTER_RANGE = (0.0, 0.3)
# per-epoch overtone ranges (relative to the fundamental pulse)
NASAL_H2 = (0.0, 0.15)
NASAL_H3 = (0.0, 0.06)
MOUTH_H2 = (0.5, 0.9)
MOUTH_H3 = (0.2, 0.45)
DEPTH_VARIATION = 0.3  # slow breath-depth modulation, fraction of the mean depth
DRIFT = 0.5  # baseline wander, in units of the breathing amplitude


class BehaviourClass(IntEnum):
    NasalBreath = 0
    MouthBreath = 1
    Snoring = 2
    Bruxism = 3
    CSA = 4
    OSA = 5


CLASS_NAMES = tuple(c.name for c in BehaviourClass)
# epochs per class in the reference recording campaign
STUDY_COUNTS = (728, 701, 262, 180, 102, 146)


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: int = 1
    respiration_rate: float = 0.25
    amplitude_scale: float = 1.0
    jitter: float = 0.05
    harmonic_weights: tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def validate(self) -> None:
        lo, hi = RESP_RATE_RANGE
        if not lo <= self.respiration_rate <= hi:
            raise ValueError(f"respiration_rate {self.respiration_rate} Hz outside [{lo}, {hi}]")
        lo, hi = AMPLITUDE_RANGE
        if not lo <= self.amplitude_scale <= hi:
            raise ValueError(f"amplitude_scale {self.amplitude_scale} outside [{lo}, {hi}]")
        lo, hi = JITTER_RANGE
        if not lo <= self.jitter <= hi:
            raise ValueError(f"jitter {self.jitter} outside [{lo}, {hi}]")


@dataclass
class VibrationTrace:
    samples: np.ndarray
    label: BehaviourClass
    rate: float = RATE
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class DatasetSpec:
    counts: tuple[int, ...]
    subjects: tuple[SubjectProfile, ...]
    seed: int = 0

    def validate(self) -> None:
        if len(self.counts) != len(BehaviourClass):
            raise ValueError(f"need {len(BehaviourClass)} class counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError("class counts must be >= 0")
        if not self.subjects:
            raise ValueError("subject list is empty")
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")
        for s in self.subjects:
            s.validate()

    @classmethod
    def study_default(cls, seed: int = 0, n_subjects: int = 7) -> "DatasetSpec":
        return cls(STUDY_COUNTS, make_subjects(n_subjects, seed), seed)


def make_subjects(n: int, seed: int, first_id: int = 1) -> tuple[SubjectProfile, ...]:
    """Draw ``n`` subject profiles spread over the allowed parameter ranges."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B1EC7]))
    out = []
    for i in range(n):
        out.append(
            SubjectProfile(
                subject_id=first_id + i,
                respiration_rate=float(rng.uniform(0.18, 0.37)),
                amplitude_scale=float(rng.uniform(0.6, 1.6)),
                jitter=float(rng.uniform(0.02, 0.15)),
                harmonic_weights=(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05))),
                seed=int(rng.integers(0, 2**63 - 1)),
            )
        )
    return tuple(out)


def derive_seed(*keys: int) -> int:
    """Mix integer keys into one 64-bit seed."""
    return int(np.random.SeedSequence([int(k) & (2**64 - 1) for k in keys]).generate_state(1, np.uint64)[0])


# -- waveform pieces -----------------------------------------------------------

_LOWPASS = signal.butter(4, 3.0, fs=RATE, output="sos")
_SLOW = signal.butter(2, 0.3, fs=RATE, output="sos")
_BANDPASS = signal.butter(4, (4.0, 9.0), btype="bandpass", fs=RATE, output="sos")


def _band_noise(rng: np.random.Generator, n: int, sos=_LOWPASS) -> np.ndarray:
    """Unit-variance Gaussian noise confined to the sensing band."""
    x = signal.sosfiltfilt(sos, rng.standard_normal(n + 200))[100:-100]
    return x / x.std()


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0


def _breath_phase(rng: np.random.Generator, rate: float, t: np.ndarray) -> np.ndarray:
    f = rate * rng.uniform(0.95, 1.05)
    wobble = 0.25 * np.sin(2 * np.pi * rng.uniform(0.04, 0.1) * t + rng.uniform(0, 2 * np.pi))
    return 2 * np.pi * f * t + rng.uniform(0, 2 * np.pi) + wobble


def _breath(phase: np.ndarray, h2: float, h3: float, rng: np.random.Generator) -> np.ndarray:
    # raised-cosine pulse per cycle (mean removed) plus phase-jittered overtones
    pulse = 0.5 * (1.0 - np.cos(phase)) - 0.5
    over = h2 * np.cos(2 * phase + rng.uniform(0, 2 * np.pi)) + h3 * np.cos(3 * phase + rng.uniform(0, 2 * np.pi))
    return 2.0 * (pulse + 0.5 * over)


def _cos_ramp(n: int) -> np.ndarray:
    return 0.5 * (1 - np.cos(np.linspace(0, np.pi, n)))


def _window(rng: np.random.Generator, n: int, min_s: float, max_s: float, margin_s: float = 0.5) -> tuple[int, int]:
    length = int(round(rng.uniform(min_s, max_s) * RATE))
    margin = int(margin_s * RATE)
    start = int(rng.integers(margin, n - margin - length + 1))
    return start, start + length


def _harmonics(label: BehaviourClass, profile: SubjectProfile, rng: np.random.Generator) -> tuple[float, float]:
    # per-epoch draws from disjoint nasal and mouth ranges, shifted by the subject's offset
    dh2, dh3 = profile.harmonic_weights
    if label == BehaviourClass.MouthBreath:
        h2, h3 = rng.uniform(*MOUTH_H2), rng.uniform(*MOUTH_H3)
    else:
        h2, h3 = rng.uniform(*NASAL_H2), rng.uniform(*NASAL_H3)
    return max(0.0, h2 + dh2), max(0.0, h3 + dh3)


def _slow(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance noise below 0.3 Hz (posture drift, breath-to-breath depth)."""
    return _band_noise(rng, n, _SLOW)


# -- public API ------------------------------------------------------------------

def synth_epoch(label: BehaviourClass | int, profile: SubjectProfile, epoch_seed: int) -> VibrationTrace:
    """One 10 s epoch of source vibration for ``label``.

    The output is a pure function of its arguments. Amplitudes are in
    arbitrary units (breathing peaks near ``profile.amplitude_scale``).
    """
    profile.validate()
    label = BehaviourClass(int(label))
    rng = np.random.default_rng(np.random.SeedSequence([int(epoch_seed) & (2**64 - 1), profile.seed & (2**64 - 1), int(label)]))
    n = EPOCH_SAMPLES
    t = np.arange(n) / RATE
    amp = profile.amplitude_scale * rng.uniform(0.9, 1.1)
    phase = _breath_phase(rng, profile.respiration_rate, t)
    h2, h3 = _harmonics(label, profile, rng)
    depth = np.clip(1.0 + DEPTH_VARIATION * _slow(rng, n), 0.3, None)
    pulse = amp * depth * _breath(phase, h2, h3, rng)
    breath = pulse + amp * DRIFT * _slow(rng, n)
    meta: dict = {"respiration_rate": profile.respiration_rate, "harmonics": (h2, h3), "amplitude": amp}

    noise_gain = profile.jitter * (1.5 if label == BehaviourClass.MouthBreath else 1.0)
    x = breath.copy()

    if label == BehaviourClass.Snoring:
        f_snore = rng.uniform(4.0, 8.0)
        exhale = np.clip(-np.sin(phase), 0.0, None)
        cycle = np.floor((phase - np.pi) / (2 * np.pi)).astype(int)
        gains = {c: rng.uniform(0.8, 1.6) for c in np.unique(cycle)}
        per_cycle = np.array([gains[c] for c in cycle])
        snore = amp * per_cycle * exhale * np.sin(2 * np.pi * f_snore * t + rng.uniform(0, 2 * np.pi))
        x = x + snore
        active = exhale > 0.05
        edges = np.flatnonzero(np.diff(np.r_[0, active.astype(int), 0]))
        meta["snore_frequency"] = f_snore
        meta["snore_bursts"] = [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]

    elif label == BehaviourClass.Bruxism:
        breath = 0.35 * breath
        pulse = 0.35 * pulse
        x = breath.copy()
        n_bursts = int(rng.integers(1, 4))
        bursts: list[tuple[int, int]] = []
        while len(bursts) < n_bursts:
            a, b = _window(rng, n, 0.5, 2.0, margin_s=0.2)
            if all(b + 20 <= s or a >= e + 20 for s, e in bursts):
                bursts.append((a, b))
        bursts.sort()
        envelope_peak = float(np.max(np.abs(x)))
        burst_wave = np.zeros(n)
        for a, b in bursts:
            m = b - a
            tt = t[:m]
            osc = np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * tt + rng.uniform(0, 2 * np.pi))
            osc += 0.6 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * tt + rng.uniform(0, 2 * np.pi))
            osc *= np.hanning(m)
            osc /= np.max(np.abs(osc))
            burst_wave[a:b] = osc * rng.uniform(4.0, 6.0) * max(envelope_peak, 0.35 * amp)
        x = x + burst_wave
        meta["bursts"] = bursts
        meta["breath_peak"] = envelope_peak

    elif label == BehaviourClass.OSA:
        a, b = _window(rng, n, 3.0, 6.0)
        m = b - a
        taper = np.ones(m)
        r = 30
        taper[:r] = _cos_ramp(r)
        taper[-r:] = _cos_ramp(r)[::-1]
        effort = _band_noise(rng, m, _BANDPASS) * rng.uniform(1.5, 2.5) * (1.0 + 3.0 * profile.jitter) * _rms(breath)
        limit = 3.0 * amp
        effort = limit * np.tanh(effort / limit)
        x[a:b] = breath[a:b] * (1 - 0.7 * taper) + effort * taper
        meta["obstruction"] = (a, b)

    if noise_gain > 0:
        x = x + noise_gain * _rms(pulse) * _band_noise(rng, n)

    if label == BehaviourClass.CSA:
        a, b = _window(rng, n, 3.0, 6.0, margin_s=0.8)
        gate = np.ones(n)
        gate[a:b] = 0.0
        r = 30
        gate[a - r : a] = _cos_ramp(r)[::-1]
        gate[b : b + r] = _cos_ramp(r)
        x = x * gate
        meta["pause"] = (a, b)

    return VibrationTrace(samples=x, label=label, meta=meta)


def synth_dataset(spec: DatasetSpec) -> list[tuple[VibrationTrace, BehaviourClass, int]]:
    """Generate ``spec.counts[c]`` epochs of every class.

    Epochs are enumerated class by class and assigned to subjects round-robin
    over the whole sequence, so subject loads differ by at most one.
    """
    spec.validate()
    out = []
    j = 0
    for cls, count in zip(BehaviourClass, spec.counts):
        for _ in range(count):
            subject = spec.subjects[j % len(spec.subjects)]
            trace = synth_epoch(cls, subject, derive_seed(spec.seed, j))
            out.append((trace, cls, subject.subject_id))
            j += 1
    return out


BANDS = ((0.0, 2.0), (2.0, 10.0), (10.0, 50.0))


def spectral_profile(samples: np.ndarray | VibrationTrace, rate: float = RATE) -> tuple[float, float, float]:
    """Fractions of (mean-removed) power in the 0-2, 2-10 and 10-50 Hz bands.

    A band owns frequencies in ``[lo, hi)``; the top band also owns Nyquist.
    A trace with no AC power is attributed entirely to the lowest band.
    """
    if isinstance(samples, VibrationTrace):
        rate = samples.rate
        samples = samples.samples
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty trace")
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(x.size, d=1.0 / rate)
    total = power.sum()
    if total <= 0:
        return (1.0, 0.0, 0.0)
    fr = []
    for i, (lo, hi) in enumerate(BANDS):
        sel = (freqs >= lo) & ((freqs < hi) if i < len(BANDS) - 1 else (freqs <= hi + 1e-9))
        fr.append(power[sel].sum())
    fr = np.asarray(fr) / total
    return tuple(float(v) for v in fr)


def low_band_fraction(samples: np.ndarray, rate: float = RATE, cutoff: float = 10.0) -> float:
    """Fraction of mean-removed power strictly below ``cutoff`` Hz."""
    x = np.asarray(samples, dtype=np.float64)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(x.size, d=1.0 / rate)
    total = power.sum()
    return 1.0 if total <= 0 else float(power[freqs < cutoff].sum() / total)


def sign_change_rate(x: np.ndarray) -> float:
    """Fraction of consecutive sample pairs whose signs differ."""
    x = np.asarray(x)
    if x.size < 2:
        return 0.0
    s = np.signbit(x)
    return float(np.mean(s[1:] != s[:-1]))


def summary_features(samples: np.ndarray) -> np.ndarray:
    """(band powers, RMS, zero-crossing rate) used for quick separability checks."""
    bands = spectral_profile(samples)
    return np.array([*bands, _rms(samples), sign_change_rate(np.asarray(samples) - np.mean(samples))])


def class_counts(labels: Sequence[int]) -> tuple[int, ...]:
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=len(BehaviourClass))
    return tuple(int(c) for c in counts)
