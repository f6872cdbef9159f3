"""Exponential-kernel Hawkes simulation by Ogata thinning.

Intensity: ``base_rate + excitation * sum_j exp(decay * (t - t_j))`` with
``decay < 0``.  Between events the intensity only decays, so its value just
after the current time is a valid thinning bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ValidationError


@dataclass(frozen=True)
class HawkesParams:
    base_rate: float
    excitation: float = 0.0
    decay: float = -1.0

    def __post_init__(self):
        if not self.base_rate > 0:
            raise ValidationError(f"base_rate must be > 0, got {self.base_rate}")
        if self.excitation < 0:
            raise ValidationError(f"excitation must be >= 0, got {self.excitation}")
        if not self.decay < 0:
            raise ValidationError(f"decay must be < 0, got {self.decay}")

    @property
    def branching_ratio(self) -> float:
        return self.excitation / -self.decay

    @property
    def stationary_rate(self) -> float:
        return self.base_rate / (1.0 - self.branching_ratio)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_hawkes(p: HawkesParams, horizon: float, seed=None) -> np.ndarray:
    """Event times in [0, horizon], strictly increasing."""
    if not horizon > 0:
        raise ContractError(f"horizon must be > 0, got {horizon}")
    if p.branching_ratio >= 1:
        warnings.warn(f"Hawkes branching ratio {p.branching_ratio:.3g} >= 1 is non-stationary",
                      RuntimeWarning, stacklevel=2)
    rng = _rng(seed)
    times = []
    t = 0.0
    excite = 0.0  # sum_j exp(decay * (t - t_j)) at time t
    while True:
        bound = p.base_rate + p.excitation * excite
        wait = rng.exponential(1.0 / bound)
        t += wait
        if t > horizon:
            break
        excite *= math.exp(p.decay * wait)
        rate = p.base_rate + p.excitation * excite
        if rng.uniform() * bound <= rate:
            if times and t <= times[-1]:
                continue
            times.append(t)
            excite += 1.0
    return np.asarray(times)


def compensator_increments(times, p: HawkesParams, start: float = 0.0) -> np.ndarray:
    """Integrated intensity between consecutive events (first from ``start``).

    Under the true parameters these are i.i.d. Exp(1) by the time-rescaling theorem.
    """
    times = np.asarray(times, dtype=np.float64)
    out = np.empty(times.size)
    beta = -p.decay
    excite, prev = 0.0, start
    for i, t in enumerate(times):
        dt = t - prev
        out[i] = p.base_rate * dt + p.excitation * excite * (1.0 - math.exp(-beta * dt)) / beta
        excite = excite * math.exp(-beta * dt) + 1.0
        prev = t
    return out
