"""Exponential-affine conditional intensity: rate, density, survival, mean.

The intensity after the last event is ``exp(v.h + u * s + b)`` where ``s`` is
the time elapsed since that event.  Its compensator integrates in closed
form, so density and survival are exact; only the mean needs quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericError

U_ZERO = 1e-8          # |u| below this counts as constant rate for the support end
MAX_EXPONENT = 700.0   # exp overflows shortly above 709
SURVIVAL_FLOOR = 1e-16  # quadrature stops where survival drops below this
DEFAULT_HORIZON = 1e6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class TppParams:
    v: np.ndarray
    u: float
    b: float

    def base(self, h) -> float:
        """Log-intensity right after the last event, ``v.h + b``."""
        return float(np.dot(self.v, h)) + self.b


class DurationEstimate(NamedTuple):
    mean: float
    truncated: bool


def _check_d(d):
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ContractError(f"duration must be >= 0, got {d.min()}")
    return d


def _compensator(base, u, d):
    """Integrated intensity over [0, d]: exp(base) * expm1(u d) / u.

    Near u d = 0 a short series replaces the ratio, matching the graph op.
    """
    lam0 = math.exp(base)
    x = u * np.asarray(d, dtype=np.float64)
    small = np.abs(x) < ad.SERIES_CUTOFF
    # far tail: expm1 overflows to inf, survival underflows to 0, log to -inf
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ratio = np.where(small, d * (1.0 + x / 2.0 + x * x / 6.0 + x ** 3 / 24.0),
                         np.expm1(x) / u)
    return lam0 * ratio


def log_intensity_at(base: float, u: float, d):
    return base + u * np.asarray(d, dtype=np.float64)


def log_survival_at(base: float, u: float, d):
    return -_compensator(base, u, _check_d(d))


def log_density_at(base: float, u: float, d):
    d = _check_d(d)
    return base + u * d - _compensator(base, u, d)


def intensity(h, p: TppParams, elapsed: float) -> float:
    if elapsed < 0:
        raise ContractError(f"elapsed must be >= 0, got {elapsed}")
    expo = p.base(h) + p.u * elapsed
    if expo > MAX_EXPONENT:
        raise NumericError(f"intensity exponent {expo:.6g} overflows")
    return math.exp(expo)


def log_density(h, p: TppParams, d):
    return log_density_at(p.base(h), p.u, d)


def log_survival(h, p: TppParams, d):
    return log_survival_at(p.base(h), p.u, d)


def _support_end(base: float, u: float) -> float:
    """Smallest d with survival(d) < SURVIVAL_FLOOR (inf when never reached)."""
    target = -math.log(SURVIVAL_FLOOR)
    lam0 = math.exp(base)
    if abs(u) < U_ZERO:
        return target / lam0
    if u > 0:
        return math.log1p(target * u / lam0) / u
    if lam0 / -u <= target:
        return math.inf
    return math.log1p(target * u / lam0) / u


def mean_duration(base: float, u: float, horizon: float = DEFAULT_HORIZON,
                  rtol: float = 1e-9, max_panels: int = 1 << 12) -> DurationEstimate:
    """``integral_0^inf s f(s) ds`` by composite Gauss-Legendre with panel doubling.

    Panels are spaced geometrically over [end * 1e-16, end] so that mass near
    zero and a long (possibly truncated) tail are both resolved cheaply.
    """
    if not (math.isfinite(base) and math.isfinite(u)):
        raise NumericError(f"non-finite head parameters base={base}, u={u}")
    end = _support_end(base, u)
    truncated = end > horizon
    end = min(end, horizon)
    panels, previous = 32, None
    while True:
        edges = np.concatenate([[0.0], np.geomspace(end * 1e-16, end, panels)])
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        estimate = float(np.sum(w * s * np.exp(log_density_at(base, u, s))))
        if previous is not None and abs(estimate - previous) <= rtol * abs(estimate):
            return DurationEstimate(estimate, truncated)
        if panels >= max_panels:
            return DurationEstimate(estimate, truncated)
        previous, panels = estimate, panels * 2


def expected_duration(h, p: TppParams, horizon: float = DEFAULT_HORIZON) -> DurationEstimate:
    return mean_duration(p.base(h), p.u, horizon)


def log_density_graph(base: ad.Tensor, u: ad.Tensor, d) -> ad.Tensor:
    """Differentiable log-density for a vector of bases and durations.

    ``base`` has one entry per duration; ``u`` is a scalar parameter.
    """
    d = np.asarray(d, dtype=np.float64)
    return base + u * d - ad.exp(base) * ad.expm1_ratio(u, d)
