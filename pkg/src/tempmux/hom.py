"""Two-fold and four-fold HOM interference between the MUX source (source 1)
and a NO-MUX reference source (source 2), with the blocked-arm noise
acquisitions used to correct the four-fold dip.

Source 1's routing follows the latched controller: each frame enters with
the route of the previous frame's last herald, drawn from the latch's
stationary distribution, so frames can be sampled independently.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import _rng
from .detection import DetectorConfig, Gate
from .network import N_ROUTES, SwitchNetwork
from .stats import _check_mu, _check_prob, bernoulli_positions, sample_pair_count, thermal_pmf

MAX_PHOTONS = 3
ACQ_RAW, ACQ_N1, ACQ_N2, ACQ_D, ACQ_TWOFOLD = range(5)


@dataclass(frozen=True)
class HomConfig:
    """HOM setup. ``mu_source1``/``mu_source2`` are per pump pulse."""

    overlap_sigma_ps: float = 10.0
    intrinsic_overlap_max: float = 0.92
    mu_source1: float = 0.07
    mu_source2: float = 0.13
    herald1: DetectorConfig = field(default_factory=lambda: DetectorConfig(0.2, 2.5e-6, Gate.FREE_RUNNING))
    herald2: DetectorConfig = field(default_factory=lambda: DetectorConfig(0.2, 2.5e-6, Gate.FREE_RUNNING))
    # transmission of each signal arm up to the coupler, times the output detector efficiency
    arm1_efficiency: float = 0.3
    arm2_efficiency: float = 0.2
    output_dark_prob: float = 1e-5
    network: SwitchNetwork = field(default_factory=SwitchNetwork)
    delay_grid_ps: tuple = tuple(float(x) for x in range(-60, 61, 6))
    frames: int = 50_000_000
    single_pair: bool = False   # at most one pair per source per frame
    source2_bin: int = N_ROUTES - 1

    def __post_init__(self):
        if not self.overlap_sigma_ps > 0:
            raise ValueError("overlap_sigma_ps must be > 0")
        _check_prob(self.intrinsic_overlap_max, "intrinsic_overlap_max")
        _check_mu(self.mu_source1)
        _check_mu(self.mu_source2)
        _check_prob(self.arm1_efficiency, "arm1_efficiency")
        _check_prob(self.arm2_efficiency, "arm2_efficiency")
        _check_prob(self.output_dark_prob, "output_dark_prob")
        if len(self.delay_grid_ps) == 0:
            raise ValueError("delay_grid_ps must not be empty")
        object.__setattr__(self, "delay_grid_ps", tuple(float(x) for x in self.delay_grid_ps))


class FoldCounts(NamedTuple):
    delta_t: float
    c_raw: int
    c_n1: int
    c_n2: int
    c_d: int


def overlap(delta_t_ps: float, cfg: HomConfig) -> float:
    """Mode overlap M at relative delay ``delta_t_ps``."""
    return cfg.intrinsic_overlap_max * math.exp(-float(delta_t_ps) ** 2 / (2.0 * cfg.overlap_sigma_ps ** 2))


# ---------------------------------------------------------------------------
# 50:50 coupler


@lru_cache(maxsize=None)
def _bs_output(n: int, k: int) -> dict:
    """Output photon-number distribution for |n, k> on a 50:50 coupler.

    Uses <p, q| U |n, k> = sum_j C(n, j) C(k, p - j) (-1)^(k - p + j) * norm.
    """
    out = {}
    tot = n + k
    for p in range(tot + 1):
        q = tot - p
        amp = 0.0
        for j in range(max(0, p - k), min(n, p) + 1):
            amp += math.comb(n, j) * math.comb(k, p - j) * (-1) ** (k - (p - j))
        amp *= math.sqrt(math.factorial(p) * math.factorial(q) / (math.factorial(n) * math.factorial(k))) / 2 ** (tot / 2)
        if amp * amp > 0:
            out[(p, q)] = amp * amp
    return out


def _empty_probs(n1: int, n2: int, m: float) -> tuple[float, float, float]:
    """P(output 3 empty), P(output 4 empty), P(both empty)."""
    p3 = p4 = p34 = 0.0
    for k in range(n2 + 1):
        w = math.comb(n2, k) * m ** k * (1.0 - m) ** (n2 - k)
        if w == 0.0:
            continue
        # orthogonal photons split independently; empty port needs all on the other side
        o = n2 - k
        half = 0.5 ** o
        for (p, q), pr in _bs_output(n1, k).items():
            if p == 0:
                p3 += w * pr * half
            if q == 0:
                p4 += w * pr * half
            if p == 0 and q == 0:
                p34 += w * pr * (1.0 if o == 0 else 0.0)
    return p3, p4, p34


def bs_coincidence_prob(n1: int, n2: int, m: float, dark: float = 0.0) -> float:
    """Probability that both coupler outputs click.

    ``n1`` photons enter port 1 and ``n2`` port 2; each port-2 photon shares
    port 1's mode with probability ``m`` and is orthogonal otherwise.
    Threshold detectors with ``dark`` probability each.
    """
    n1, n2 = int(n1), int(n2)
    if n1 < 0 or n2 < 0:
        raise ValueError("photon numbers must be >= 0")
    if n1 > MAX_PHOTONS or n2 > MAX_PHOTONS:
        raise ValueError(f"photon numbers above {MAX_PHOTONS} are outside the truncated Fock space")
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"overlap must lie in [0, 1], got {m!r}")
    p3, p4, p34 = _empty_probs(n1, n2, float(m))
    off = 1.0 - dark
    return max(0.0, 1.0 - off * p3 - off * p4 + off * off * p34)


def coincidence_table(m: float, dark: float = 0.0) -> np.ndarray:
    t = np.zeros((MAX_PHOTONS + 1, MAX_PHOTONS + 1))
    for a in range(MAX_PHOTONS + 1):
        for b in range(MAX_PHOTONS + 1):
            t[a, b] = bs_coincidence_prob(a, b, m, dark)
    return t


# ---------------------------------------------------------------------------
# sources


def _clicks(pairs: np.ndarray, det: DetectorConfig, rng) -> np.ndarray:
    real = rng.binomial(pairs, det.efficiency) > 0
    if det.dark_prob_per_bin > 0:
        real |= rng.random(pairs.shape) < det.dark_prob_per_bin
    return real


def _latch_distribution(cfg: HomConfig) -> np.ndarray:
    """Stationary probability of the route latched when a frame starts."""
    d, eta, mu = cfg.herald1.dark_prob_per_bin, cfg.herald1.efficiency, cfg.mu_source1
    p = 1.0 - (1.0 - d) / (1.0 + mu * eta)
    last = np.array([p * (1.0 - p) ** (N_ROUTES - 1 - s) for s in range(N_ROUTES)])
    if last.sum() == 0:
        return np.eye(N_ROUTES)[N_ROUTES - 1]
    return last / last.sum()


def _pairs(mu: float, shape, single: bool, rng) -> np.ndarray:
    n = sample_pair_count(mu, rng, shape)
    return np.minimum(n, 1) if single else n


def _single_pair_frames(pairs: np.ndarray) -> np.ndarray:
    """Keep only the first pair of each frame."""
    out = np.zeros_like(pairs)
    first = np.argmax(pairs > 0, axis=1)
    has = pairs.any(axis=1)
    out[np.nonzero(has)[0], first[has]] = 1
    return out


def source1_frames(cfg: HomConfig, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """(photons reaching the coupler, any herald click) for ``n`` MUX frames."""
    pairs = _pairs(cfg.mu_source1, (n, N_ROUTES), cfg.single_pair, rng)
    if cfg.single_pair:
        pairs = _single_pair_frames(pairs)
    return _route_photons(cfg, pairs, rng)


def _conditional_pairs(mu: float, det: DetectorConfig, size: int, single: bool, rng) -> np.ndarray:
    """Pair numbers of pulses whose herald clicked."""
    nmax = 1 if single else 60
    n = np.arange(nmax + 1)
    prior = np.array([1.0, mu]) / (1.0 + mu) if single else thermal_pmf(mu, n)
    w = prior * (1.0 - (1.0 - det.dark_prob_per_bin) * (1.0 - det.efficiency) ** n)
    cdf = np.cumsum(w / w.sum())
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), nmax)


def _herald_prob(mu: float, det: DetectorConfig, single: bool) -> float:
    if single:
        p1 = mu / (1.0 + mu)
        return 1.0 - (1.0 - det.dark_prob_per_bin) * (1.0 - p1 * det.efficiency)
    return 1.0 - (1.0 - det.dark_prob_per_bin) / (1.0 + mu * det.efficiency)


def source2_heralded(cfg: HomConfig, frames: int, rng) -> np.ndarray:
    """Signal photons reaching the coupler in the frames where herald 2 clicked."""
    p = _herald_prob(cfg.mu_source2, cfg.herald2, cfg.single_pair)
    k = bernoulli_positions(p, frames, rng).size
    pairs = _conditional_pairs(cfg.mu_source2, cfg.herald2, k, cfg.single_pair, rng)
    return rng.binomial(pairs, cfg.arm2_efficiency)


def _tally(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    a = np.minimum(n1, MAX_PHOTONS)
    b = np.minimum(n2, MAX_PHOTONS)
    return np.bincount(a * (MAX_PHOTONS + 1) + b, minlength=(MAX_PHOTONS + 1) ** 2).reshape(MAX_PHOTONS + 1, -1)


def _counts(tally: np.ndarray, m: float, dark: float, rng) -> int:
    return int(rng.binomial(tally, coincidence_table(m, dark)).sum())


def _fourfold(cfg: HomConfig, m: float, block1: bool, block2: bool, rng) -> int:
    n2 = source2_heralded(cfg, cfg.frames, rng)
    n1, h1 = source1_frames(cfg, n2.size, rng)
    keep = h1
    a = np.zeros(keep.sum(), dtype=np.int64) if block1 else n1[keep]
    b = np.zeros(keep.sum(), dtype=np.int64) if block2 else n2[keep]
    return _counts(_tally(a, b), m, cfg.output_dark_prob, rng)


def simulate_fourfold(cfg: HomConfig, seed: int) -> list[FoldCounts]:
    """Raw four-fold counts and the three blocked-arm acquisitions per delay.

    Every acquisition at every delay has its own stream and the same number
    of frames.
    """
    out = []
    for i, dt in enumerate(cfg.delay_grid_ps):
        m = overlap(dt, cfg)
        c = [_fourfold(cfg, m, b1, b2, _rng.stream(seed, _rng.HOM, i, acq))
             for acq, (b1, b2) in ((ACQ_RAW, (False, False)), (ACQ_N1, (False, True)),
                                   (ACQ_N2, (True, False)), (ACQ_D, (True, True)))]
        out.append(FoldCounts(dt, *c))
    return out


def _route_photons(cfg: HomConfig, pairs: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    her = _clicks(pairs, cfg.herald1, rng)
    net = cfg.network
    cross = net.stage1_cross()
    trans = net.transmissions(include_buffer=True) * cfg.arm1_efficiency
    n = pairs.shape[0]
    route = rng.choice(N_ROUTES, size=n, p=_latch_distribution(cfg))
    n1 = np.zeros(n, dtype=np.int64)
    for s in range(N_ROUTES):
        fresh = her[:, s]
        passes = fresh | ((route == s) & (not cross[s]))
        n1 += rng.binomial(np.where(passes, pairs[:, s], 0), trans[s])
        route = np.where(fresh, s, route)
    return n1, her.any(axis=1)


def _occupied_rows(mu: float, n: int, single: bool, rng) -> np.ndarray:
    """Pair numbers of ``n`` MUX frames conditioned on at least one pair.

    The first occupied bin is drawn from its truncated geometric law; it
    holds ``1 + thermal`` pairs, later bins are unconditioned.
    """
    q = 1.0 / (1.0 + mu)
    w = q ** np.arange(N_ROUTES)
    first = rng.choice(N_ROUTES, size=n, p=w / w.sum())
    rows = _pairs(mu, (n, N_ROUTES), single, rng)
    col = np.arange(N_ROUTES)[None, :]
    rows = np.where(col < first[:, None], 0, rows)
    extra = 1 if single else 1 + sample_pair_count(mu, rng, n)
    rows[np.arange(n), first] = extra
    return _single_pair_frames(rows) if single else rows


def simulate_twofold(cfg: HomConfig, seed: int, frames: Optional[int] = None) -> list[tuple[float, int]]:
    """Unheralded coupler coincidences per delay.

    Only frames in which a source emits pairs are drawn explicitly; the
    empty frames enter the tally as photon-free frames.
    """
    frames = cfg.frames if frames is None else int(frames)
    out = []
    p_any1 = 1.0 - (1.0 + cfg.mu_source1) ** -N_ROUTES
    p_any2 = cfg.mu_source2 / (1.0 + cfg.mu_source2)
    for i, dt in enumerate(cfg.delay_grid_ps):
        rng = _rng.stream(seed, _rng.HOM, i, ACQ_TWOFOLD)
        pos1 = bernoulli_positions(p_any1, frames, rng)
        n1, _ = _route_photons(cfg, _occupied_rows(cfg.mu_source1, pos1.size, cfg.single_pair, rng), rng)
        pos2 = bernoulli_positions(p_any2, frames, rng)
        pairs2 = np.ones(pos2.size, dtype=np.int64)
        if not cfg.single_pair:
            pairs2 += sample_pair_count(cfg.mu_source2, rng, pos2.size)
        n2 = rng.binomial(pairs2, cfg.arm2_efficiency)
        pos1, n1 = pos1[n1 > 0], n1[n1 > 0]
        pos2, n2 = pos2[n2 > 0], n2[n2 > 0]
        both, i1, i2 = np.intersect1d(pos1, pos2, assume_unique=True, return_indices=True)
        only1 = np.delete(n1, i1)
        only2 = np.delete(n2, i2)
        n_empty = frames - len(pos1) - len(pos2) + len(both)
        tally = (_tally(n1[i1], n2[i2]) + _tally(only1, np.zeros_like(only1))
                 + _tally(np.zeros_like(only2), only2))
        tally[0, 0] += n_empty
        out.append((dt, _counts(tally, overlap(dt, cfg), cfg.output_dark_prob, rng)))
    return out


def twofold_config(cfg: HomConfig, car_level: float = 18.0) -> HomConfig:
    """``cfg`` with both sources pumped to the given heralded CAR."""
    from .analysis import LossBudget, mu_at_car

    d = cfg.output_dark_prob
    m1 = mu_at_car(car_level, LossBudget(cfg.herald1.efficiency, cfg.arm1_efficiency), d,
                   cfg.herald1.dark_prob_per_bin, cfg.network)
    m2 = mu_at_car(car_level, LossBudget(cfg.herald2.efficiency, cfg.arm2_efficiency), d,
                   cfg.herald2.dark_prob_per_bin)
    return replace(cfg, mu_source1=m1, mu_source2=m2)


def noise_correct(fc: FoldCounts) -> int:
    """Net four-fold count; negative values are kept."""
    return int(fc.c_raw) - int(fc.c_n1) - int(fc.c_n2) + int(fc.c_d)


# ---------------------------------------------------------------------------
# dip fit


class DipFit(NamedTuple):
    visibility: float
    baseline: float
    width_ps: float
    center_ps: float
    visibility_err: float


def _dip(t, base, vis, width, center):
    return base * (1.0 - vis * np.exp(-((t - center) ** 2) / (2.0 * width ** 2)))


def fit_dip(delta_t, counts, width_guess_ps: float = 10.0) -> DipFit:
    t = np.asarray(delta_t, dtype=float)
    c = np.asarray(counts, dtype=float)
    if c.size < 4:
        raise ValueError("need at least four delay points")
    edge = np.argsort(np.abs(t))[-max(2, c.size // 4):]
    base = c[edge].mean()
    if not base > 0:
        raise ValueError("zero baseline: visibility is undefined")
    if np.all(c == c[0]):
        return DipFit(0.0, float(c[0]), math.nan, 0.0, 0.0)
    vis0 = min(1.0, max(0.0, 1.0 - c.min() / base))
    sigma = np.sqrt(np.maximum(c, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p, cov = curve_fit(_dip, t, c, p0=[base, vis0, width_guess_ps, 0.0], sigma=sigma,
                           absolute_sigma=True, maxfev=20000)
    err = float(np.sqrt(cov[1, 1])) if np.all(np.isfinite(cov)) else math.nan
    return DipFit(float(p[1]), float(p[0]), abs(float(p[2])), float(p[3]), err)


def visibility(delta_t, counts) -> float:
    """1 - fitted minimum / fitted plateau of a Gaussian dip."""
    return fit_dip(delta_t, counts).visibility


def write_hom_csv(path, folds: Sequence[FoldCounts], header_lines=()) -> float:
    """Per-delay counts plus the fitted visibility of the net dip; returns that visibility."""
    t = [f.delta_t for f in folds]
    net = [noise_correct(f) for f in folds]
    v = visibility(t, net)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta_t_ps", "c_raw", "c_n1", "c_n2", "c_d", "c_net", "visibility_fit"])
        for f, c in zip(folds, net):
            w.writerow([repr(f.delta_t), f.c_raw, f.c_n1, f.c_n2, f.c_d, c, repr(v)])
    return v
