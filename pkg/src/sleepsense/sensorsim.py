"""Six-channel printed strain-sensor array and its 1 V current readout.

Each circular channel is four quarter-ring piezoresistors in parallel. A
quarter ring centred at angle ``theta`` picks up horizontal and vertical
strain with weights ``(1/2 - cos(2 theta)/pi, 1/2 + cos(2 theta)/pi)``, the
arc-averaged projection of the strain onto the ring tangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal, stats

from .synthgen import RATE, VibrationTrace

N_CHANNELS = 6
SUPPLY_VOLTS = 1.0
NOMINAL_R_QUARTER = 40e3  # ohm; four in parallel give 10 kOhm per channel
NOMINAL_GAUGE_FACTOR = 100.0
R_VARIATION = 0.1269
GF_VARIATION = 0.0916
STRAIN_PER_UNIT = 1e-3  # source amplitude 1 -> 0.1 % strain
STRAIN_FLOOR = 1e-3
STRAIN_LIMIT = 0.05
BIAXIAL_RATIO = 0.5  # vertical strain per unit horizontal strain
STRAIN_NOISE = 1e-5
CUTOFF_HZ = 20.0
WEAR_FLOOR = 0.9
WEAR_CYCLES = 5.0
CHANNEL_CENTRES = np.linspace(-0.75, 0.75, N_CHANNELS)
COUPLING_WIDTH = 1.0
QUARTER_ANGLES = np.deg2rad([0.0, 90.0, 180.0, 270.0])


def quarter_ring_weights() -> tuple[tuple[float, float], ...]:
    """Horizontal/vertical sensitivity of each of the four quarter rings."""
    c = np.cos(2 * QUARTER_ANGLES) / np.pi
    return tuple((float(0.5 - v), float(0.5 + v)) for v in c)


@dataclass(frozen=True)
class ChannelUnit:
    base_resistance_quarter: float = NOMINAL_R_QUARTER
    gauge_factor: float = NOMINAL_GAUGE_FACTOR
    orientation: tuple[tuple[float, float], ...] = field(default_factory=quarter_ring_weights)

    def __post_init__(self) -> None:
        if self.base_resistance_quarter <= 0:
            raise ValueError("base resistance must be positive")
        if self.gauge_factor <= 0:
            raise ValueError("gauge factor must be positive")


@dataclass(frozen=True)
class Placement:
    offset: float = 0.0  # position of the strongest-response point along the collar, [-1, 1]
    tightness: float = 1.0  # [0.5, 1.5]

    def __post_init__(self) -> None:
        if not -1.0 <= self.offset <= 1.0:
            raise ValueError(f"offset {self.offset} outside [-1, 1]")
        if not 0.5 <= self.tightness <= 1.5:
            raise ValueError(f"tightness {self.tightness} outside [0.5, 1.5]")


def coupling_from_placement(placement: Placement) -> np.ndarray:
    """Gaussian fall-off of strain transfer with distance from the strongest point."""
    d = CHANNEL_CENTRES - placement.offset
    alpha = placement.tightness * np.exp(-0.5 * (d / COUPLING_WIDTH) ** 2)
    return np.clip(alpha, 1e-6, 1.0)


@dataclass(frozen=True)
class ArrayInstance:
    channels: tuple[ChannelUnit, ...]
    placement: Placement = Placement()
    coupling: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.channels) != N_CHANNELS:
            raise ValueError(f"array needs exactly {N_CHANNELS} channels")
        if self.coupling is None:
            object.__setattr__(self, "coupling", coupling_from_placement(self.placement))
        alpha = np.asarray(self.coupling, dtype=float)
        if alpha.shape != (N_CHANNELS,) or np.any(alpha <= 0) or np.any(alpha > 1):
            raise ValueError("coupling must hold 6 values in (0, 1]")
        object.__setattr__(self, "coupling", tuple(float(a) for a in alpha))

    @property
    def alpha(self) -> np.ndarray:
        return np.asarray(self.coupling)


@dataclass
class ReadoutEpoch:
    currents: np.ndarray  # (6, N) amperes
    rate: float = RATE
    supply: float = SUPPLY_VOLTS
    saturated: int = 0


def nominal_array(placement: Placement | None = None) -> ArrayInstance:
    return ArrayInstance(tuple(ChannelUnit() for _ in range(N_CHANNELS)), placement or Placement())


def _truncated(rng: np.random.Generator, bound: float, size: int) -> np.ndarray:
    # bound is treated as 2 sigma and used as the hard truncation limit
    return stats.truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=bound / 2.0, size=size, random_state=rng)


def sample_placement(rng: np.random.Generator) -> Placement:
    return Placement(offset=float(rng.uniform(-1.0, 1.0)), tightness=float(rng.uniform(0.5, 1.5)))


def sample_array(variation_seed: int, variation: bool = True) -> ArrayInstance:
    """Draw one printed array: unit-to-unit spread plus a random wearing position."""
    rng = np.random.default_rng(np.random.SeedSequence([int(variation_seed) & (2**64 - 1), 0xA77A]))
    if variation:
        dr = _truncated(rng, R_VARIATION, N_CHANNELS)
        dg = _truncated(rng, GF_VARIATION, N_CHANNELS)
    else:
        dr = dg = np.zeros(N_CHANNELS)
    units = tuple(
        ChannelUnit(NOMINAL_R_QUARTER * (1 + a), NOMINAL_GAUGE_FACTOR * (1 + b)) for a, b in zip(dr, dg)
    )
    return ArrayInstance(units, sample_placement(rng))


def reposition(array: ArrayInstance, seed: int) -> ArrayInstance:
    """Same physical units, fresh wearing position."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x9051]))
    return ArrayInstance(array.channels, sample_placement(rng))


def source_to_strain(x: np.ndarray) -> np.ndarray:
    """Linear map from source amplitude to local strain at the strongest point."""
    return STRAIN_PER_UNIT * np.asarray(x, dtype=np.float64)


def propagate(
    trace: VibrationTrace | np.ndarray,
    array: ArrayInstance,
    noise_seed: int | None = 0,
    noise: float = STRAIN_NOISE,
) -> np.ndarray:
    """Per-channel strain series (6, N): ``alpha_k * g(trace) + n_k``."""
    x = trace.samples if isinstance(trace, VibrationTrace) else np.asarray(trace, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("trace contains non-finite samples")
    eps = array.alpha[:, None] * source_to_strain(x)[None, :]
    if noise > 0 and noise_seed is not None:
        rng = np.random.default_rng(np.random.SeedSequence([int(noise_seed) & (2**64 - 1), 0x1015E]))
        eps = eps + noise * rng.standard_normal(eps.shape)
    return eps


def clamp_strain(eps: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip to the characterised +/-5 % range; report how many samples were clipped."""
    eps = np.asarray(eps, dtype=np.float64)
    over = np.abs(eps) > STRAIN_LIMIT
    return np.clip(eps, -STRAIN_LIMIT, STRAIN_LIMIT), int(over.sum())


def channel_resistance(unit: ChannelUnit, eps_h, eps_v) -> np.ndarray:
    """Parallel resistance of the four quarter rings under (eps_h, eps_v).

    Each ring follows ``R0 * (1 + GF * (w_h eps_h + w_v eps_v))``. Strain is
    clamped to +/-5 % first.
    """
    eh, _ = clamp_strain(eps_h)
    ev, _ = clamp_strain(eps_v)
    w = np.asarray(unit.orientation, dtype=np.float64)
    eh, ev = np.broadcast_arrays(eh, ev)
    rel = 1.0 + unit.gauge_factor * (w[:, 0].reshape((4,) + (1,) * eh.ndim) * eh + w[:, 1].reshape((4,) + (1,) * eh.ndim) * ev)
    if np.any(rel <= 0):
        raise ValueError("strain drives a quarter-ring resistance non-positive (outside the linear model)")
    r_q = unit.base_resistance_quarter * rel
    return 1.0 / np.sum(1.0 / r_q, axis=0)


def lowpass(x: np.ndarray, cutoff: float = CUTOFF_HZ, rate: float = RATE) -> np.ndarray:
    """First-order IIR low-pass along the last axis, started at the first sample."""
    a = 1.0 - math.exp(-2 * math.pi * cutoff / rate)
    x = np.asarray(x, dtype=np.float64)
    zi = (1.0 - a) * x[..., :1]
    y, _ = signal.lfilter([a], [1.0, -(1.0 - a)], x, axis=-1, zi=zi)
    return y


def lowpass_gain(freq: float, cutoff: float = CUTOFF_HZ, rate: float = RATE) -> float:
    """Magnitude response of :func:`lowpass` at ``freq`` Hz."""
    a = 1.0 - math.exp(-2 * math.pi * cutoff / rate)
    w = 2 * math.pi * freq / rate
    return a / abs(1 - (1 - a) * complex(math.cos(w), -math.sin(w)))


def resistances(array: ArrayInstance, strains: np.ndarray) -> tuple[np.ndarray, int]:
    strains = np.asarray(strains, dtype=np.float64)
    if strains.shape[0] != N_CHANNELS:
        raise ValueError(f"expected {N_CHANNELS} strain series, got {strains.shape[0]}")
    clipped, n_sat = clamp_strain(strains)
    r = np.stack([channel_resistance(u, e, BIAXIAL_RATIO * e) for u, e in zip(array.channels, clipped)])
    return r, n_sat


def readout(array: ArrayInstance, strains: np.ndarray) -> ReadoutEpoch:
    """Currents at 1 V through each channel after the sensor's 20 Hz first-order response."""
    r, n_sat = resistances(array, strains)
    currents = SUPPLY_VOLTS / lowpass(r)
    if not np.all(np.isfinite(currents)) or np.any(currents <= 0):
        raise ValueError("readout produced non-positive or non-finite current")
    return ReadoutEpoch(currents=currents, saturated=n_sat)


def apply_wear(array: ArrayInstance, wash_cycles: float) -> ArrayInstance:
    """Scale gauge factors by ``0.9 + 0.1 * exp(-cycles / 5)`` (at most 10 % loss)."""
    if wash_cycles < 0:
        raise ValueError("wash_cycles must be >= 0")
    factor = wear_factor(wash_cycles)
    units = tuple(replace(u, gauge_factor=u.gauge_factor * factor) for u in array.channels)
    return ArrayInstance(units, array.placement, array.coupling)


def wear_factor(wash_cycles: float) -> float:
    return WEAR_FLOOR + (1.0 - WEAR_FLOOR) * math.exp(-wash_cycles / WEAR_CYCLES)


def simulate(trace: VibrationTrace | np.ndarray, array: ArrayInstance, noise_seed: int | None = 0) -> ReadoutEpoch:
    """Trace -> strains -> currents."""
    return readout(array, propagate(trace, array, noise_seed))
