"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_input: int
    worst_index: tuple[int, ...]
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward() gradients of scalar ``fn(*tensors)`` to central differences.

    The relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps coordinates whose true gradient is ~0 from reporting
    round-off as relative error. With ``max_coords`` only a seeded random
    subset of each input's coordinates is perturbed.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(a) for t, a in zip(tensors, arrays)]

    def value(which: int, flat: int, delta: float) -> float:
        probe = [a.copy() for a in arrays]
        probe[which].reshape(-1)[flat] += delta
        return float(fn(*[Tensor(p) for p in probe]).data)

    rng = np.random.default_rng(seed)
    worst = (0.0, 0, ())
    checked = 0
    for i, a in enumerate(arrays):
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = np.sort(rng.choice(a.size, size=max_coords, replace=False))
        for flat in coords:
            num = (value(i, flat, step) - value(i, flat, -step)) / (2.0 * step)
            ana = float(analytic[i].reshape(-1)[flat])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > worst[0]:
                worst = (err, i, np.unravel_index(flat, a.shape))
    return GradCheckReport(worst[0], worst[1], tuple(int(k) for k in worst[2]), checked, tolerance)
