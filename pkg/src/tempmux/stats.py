"""Thermal pair-number statistics and binomial loss.

A tightly filtered pair source emits a single thermal mode per pump pulse,
so the pair number follows the geometric law ``mu**n / (1 + mu)**(n + 1)``.
Everything downstream (heralding probabilities, CAR, output probability)
is built on the handful of closed forms in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

# photon-number support used for enumeration checks
TRUNCATION = 20


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not math.isfinite(mu) or mu < 0:
        raise ValueError(f"mean pair number must be finite and >= 0, got {mu!r}")
    return mu


def _check_prob(eta: float, name: str = "eta") -> float:
    eta = float(eta)
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {eta!r}")
    return eta


class Interval(str, Enum):
    PER_PULSE = "per_pulse"
    PER_FRAME = "per_frame"


@dataclass(frozen=True)
class MeanPairNumber:
    """Mean pair number referred to a pump pulse or to a whole clock frame."""

    mu: float
    interval: Interval = Interval.PER_PULSE

    def __post_init__(self):
        _check_mu(self.mu)
        object.__setattr__(self, "interval", Interval(self.interval))

    def per_frame(self, pulses_per_frame: int = 4) -> "MeanPairNumber":
        if self.interval is Interval.PER_FRAME:
            return self
        return MeanPairNumber(self.mu * pulses_per_frame, Interval.PER_FRAME)

    def per_pulse(self, pulses_per_frame: int = 4) -> "MeanPairNumber":
        if self.interval is Interval.PER_PULSE:
            return self
        return MeanPairNumber(self.mu / pulses_per_frame, Interval.PER_PULSE)


@dataclass(frozen=True)
class ThermalDistribution:
    mu: float

    def __post_init__(self):
        _check_mu(self.mu)

    def pmf(self, n):
        return thermal_pmf(self.mu, n)

    def cdf(self, n):
        return thermal_cdf(self.mu, n)

    def sample(self, rng: np.random.Generator, size=None):
        return sample_pair_count(self.mu, rng, size)


def thermal_pmf(mu: float, n):
    """Probability of ``n`` pairs in a thermal mode of mean ``mu``."""
    mu = _check_mu(mu)
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("pair number must be non-negative")
    if mu == 0.0:
        out = (n == 0).astype(float)
    else:
        out = np.exp(n * math.log(mu) - (n + 1) * math.log1p(mu))
    return out if out.ndim else float(out)


def thermal_cdf(mu: float, n):
    """P(N <= n) = 1 - (mu / (1 + mu))**(n + 1)."""
    mu = _check_mu(mu)
    n = np.asarray(n)
    out = 1.0 - (mu / (1.0 + mu)) ** (n + 1)
    return out if out.ndim else float(out)


def sample_pair_count(mu: float, rng: np.random.Generator, size=None):
    """Draw thermal pair counts by inverting the geometric CDF."""
    mu = _check_mu(mu)
    if mu == 0.0:
        return np.zeros(size, dtype=np.int64) if size is not None else 0
    u = rng.random(size)
    # P(N >= n) = q**n, so N = floor(log(1 - u) / log q) with 1 - u in (0, 1]
    n = np.floor(np.log1p(-u) / math.log(mu / (1.0 + mu))).astype(np.int64)
    return n if size is not None else int(n)


def thin(n, eta: float, rng: np.random.Generator):
    """Binomial loss: each of ``n`` photons survives independently with ``eta``."""
    eta = _check_prob(eta)
    return rng.binomial(n, eta)


def heralded_single_prob(mu: float) -> float:
    mu = _check_mu(mu)
    return mu / (1.0 + mu) ** 2


def multi_pair_prob(mu: float) -> float:
    """P(n >= 2) = 1 - P0 - P1, which simplifies to mu**2 / (1 + mu)**2."""
    mu = _check_mu(mu)
    return mu * mu / (1.0 + mu) ** 2


def output_prob(mu: float, eta: float) -> float:
    """Heralded single-photon output probability after collection efficiency ``eta``."""
    return heralded_single_prob(mu) * _check_prob(eta)


def click_prob(mu: float, eta: float, dark: float = 0.0) -> float:
    """Threshold-detector click probability for a thermal mode seen through ``eta``.

    Uses E[(1 - eta)**n] = 1 / (1 + mu * eta) for thermal light.
    """
    mu = _check_mu(mu)
    eta = _check_prob(eta)
    dark = _check_prob(dark, "dark")
    return 1.0 - (1.0 - dark) / (1.0 + mu * eta)


def bernoulli_positions(p: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of successes among ``n`` Bernoulli(p) trials.

    Draws geometric gaps instead of ``n`` uniforms, so the cost scales with
    the number of successes. Used to place rare events (pairs, dark counts)
    on long time grids.
    """
    p = _check_prob(p, "p")
    if n <= 0 or p == 0.0:
        return np.empty(0, dtype=np.int64)
    if p == 1.0:
        return np.arange(n, dtype=np.int64)
    expected = n * p
    size = int(expected + 6.0 * math.sqrt(expected) + 16)
    chunks = []
    last = -1
    while True:
        pos = last + np.cumsum(rng.geometric(p, size))
        if pos[-1] >= n:
            chunks.append(pos[pos < n])
            break
        chunks.append(pos)
        last = int(pos[-1])
    return np.concatenate(chunks).astype(np.int64)
