"""Inference from coincidences to output probabilities, the analytic CAR model,
enhancement factors and the switch-count design explorer.

The analytic model is exact for the discrete-time source simulated in
``tempmux.source``: per-slot thermal pairs, binomial loss, threshold
detectors with per-bin dark counts, and (for MUX) the latched controller.
For MUX it enumerates the 16 herald patterns of a frame for each latched
state entering it and weights states by the stationary distribution of the
latch.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .network import N_ROUTES, SwitchNetwork
from .stats import _check_mu, _check_prob, output_prob

VISIBLE_ACCIDENTALS = (3, 1)


@dataclass(frozen=True)
class LossBudget:
    """Collection efficiencies of the two arms.

    ``eta_heralding`` and ``eta_heralded`` include waveguide-fiber coupling,
    filtering and the detector; ``eta_pair_collection`` is the efficiency
    multiplying P1 in the output probability (defaults to the heralded arm).
    """

    eta_heralding: float = 0.01
    eta_heralded: float = 0.5
    eta_pair_collection: Optional[float] = None

    def __post_init__(self):
        _check_prob(self.eta_heralding, "eta_heralding")
        _check_prob(self.eta_heralded, "eta_heralded")
        if self.eta_pair_collection is not None:
            _check_prob(self.eta_pair_collection, "eta_pair_collection")

    @property
    def eta(self) -> float:
        return self.eta_heralded if self.eta_pair_collection is None else self.eta_pair_collection

    @staticmethod
    def from_components(coupling: float, filter_transmission: float, herald_detector: float,
                        heralded_detector: float, **kw) -> "LossBudget":
        arm = coupling * filter_transmission
        return LossBudget(arm * herald_detector, arm * heralded_detector, **kw)

    def scaled_detectors(self, factor: float) -> "LossBudget":
        eta = None if self.eta_pair_collection is None else self.eta_pair_collection * factor
        return LossBudget(self.eta_heralding * factor, self.eta_heralded * factor, eta)


def eta_network(net: SwitchNetwork, herald_weights: Optional[Sequence[float]] = None) -> float:
    """Route survival averaged with the routes' herald weights (not a dB mean)."""
    t = net.transmissions(include_buffer=True)
    w = np.ones(N_ROUTES) if herald_weights is None else np.asarray(herald_weights, dtype=float)
    return float(np.dot(w, t) / w.sum())


class ModelPoint(NamedTuple):
    rate: float             # coincidences per second in the counted peaks
    car: float
    coincidence: float      # counted coincidences per frame
    accidental: float       # counted accidentals per frame
    herald_clicks: float    # herald clicks per frame, all slots
    peaks: dict             # per-bin coincidence / accidental probabilities (MUX)


def _slot_terms(mu, eta_h, d_h, q):
    """(P[H=0, no signal], P[H=1, no signal]) for a thermal slot."""
    p0n = (1.0 - d_h) / (1.0 + mu * (eta_h + q - eta_h * q))
    return p0n, 1.0 / (1.0 + mu * q) - p0n


def _nomux(mu, budget, dark_s, dark_i, frame_rate, n_bins):
    eta_h, eta_s = budget.eta_heralding, budget.eta_heralded
    p_h = 1.0 - (1.0 - dark_i) / (1.0 + mu * eta_h)
    p_s = 1.0 - (1.0 - dark_s) / (1.0 + mu * eta_s)
    p_none = (1.0 - dark_i) * (1.0 - dark_s) / (1.0 + mu * (eta_h + eta_s - eta_h * eta_s))
    p_c = p_h + p_s - 1.0 + p_none
    p_a = p_h * p_s
    herald = p_h
    return ModelPoint(frame_rate * p_c, p_c / p_a if p_a > 0 else math.inf, p_c, p_a, herald, {})


def _mux(mu, budget, dark_s, dark_i, net, frame_rate, bin_scale):
    n = N_ROUTES
    eta_h, eta_s = budget.eta_heralding, budget.eta_heralded
    mus = [mu * s for s in bin_scale]
    q = net.transmissions(include_buffer=True) * eta_s
    cross = net.stage1_cross()
    p_h0 = [(1.0 - dark_i) / (1.0 + m * eta_h) for m in mus]
    terms_on = [_slot_terms(mus[s], eta_h, dark_i, q[s]) for s in range(n)]
    terms_off = [_slot_terms(mus[s], eta_h, dark_i, 0.0) for s in range(n)]
    patterns = list(itertools.product((0, 1), repeat=n))

    def p_pattern(h):
        return math.prod(p_h0[s] if h[s] == 0 else 1.0 - p_h0[s] for s in range(n))

    def last(h, entry):
        for s in range(n - 1, -1, -1):
            if h[s]:
                return s
        return entry

    # P(pattern and no signal click | latched route entering the frame)
    nosig = np.zeros((n, len(patterns)))
    for r in range(n):
        for j, h in enumerate(patterns):
            route = r
            prod = 1.0 - dark_s
            for s in range(n):
                if h[s]:
                    prod *= terms_on[s][1]
                    route = s
                else:
                    passes = route == s and not cross[s]
                    prod *= (terms_on if passes else terms_off)[s][0]
            nosig[r, j] = prod
    pp = np.array([p_pattern(h) for h in patterns])
    sig_joint = pp[None, :] - nosig            # P(pattern and signal | entry)
    p_sig = sig_joint.sum(axis=1)              # P(signal | entry)

    p_none = pp[patterns.index((0,) * n)]
    p_last = np.zeros(n)
    for j, h in enumerate(patterns):
        if any(h):
            p_last[last(h, 0)] += pp[j]
    pi = p_last / (1.0 - p_none) if p_none < 1.0 else np.full(n, 1.0 / n)

    coinc = np.zeros(n)
    acc = np.zeros(n)
    for k in range(n):
        with_k = np.array([h[k] == 1 for h in patterns])
        coinc[k] = float(pi @ sig_joint[:, with_k].sum(axis=1))
        a = 0.0
        for r in range(n):
            for j, h in enumerate(patterns):
                if h[k]:
                    a += pi[r] * pp[j] * p_sig[last(h, r)]
        acc[k] = a
    p_c = float(coinc.sum())
    p_a = 2.0 * float(acc[list(VISIBLE_ACCIDENTALS)].sum())
    herald = float(sum(1.0 - x for x in p_h0))
    peaks = {"coincidence": coinc, "accidental": acc, "latch": pi}
    return ModelPoint(frame_rate * p_c, p_c / p_a if p_a > 0 else math.inf, p_c, p_a, herald, peaks)


def car_model_point(mu: float, budget: LossBudget, dark_s: float, dark_i: float,
                    network: Optional[SwitchNetwork] = None, frame_rate_hz: float = 1e7,
                    n_bins: int = N_ROUTES, bin_mu_scale: Optional[Sequence[float]] = None) -> ModelPoint:
    """Closed-form expectation of the quantities the TIA accounting produces.

    ``mu`` is per pump pulse; ``dark_s`` is the gated detector's dark
    probability per gate and ``dark_i`` the heralding detector's per 25 ns bin.
    """
    mu = _check_mu(mu)
    _check_prob(dark_s, "dark_s")
    _check_prob(dark_i, "dark_i")
    if network is None:
        return _nomux(mu, budget, dark_s, dark_i, frame_rate_hz, n_bins)
    scale = [1.0] * N_ROUTES if bin_mu_scale is None else list(bin_mu_scale)
    return _mux(mu, budget, dark_s, dark_i, network, frame_rate_hz, scale)


def car_model(mu: float, budget: LossBudget, dark_s: float, dark_i: float,
              network: Optional[SwitchNetwork] = None, frame_rate_hz: float = 1e7) -> tuple[float, float]:
    """``(coincidence rate in Hz, CAR)`` for one source configuration."""
    p = car_model_point(mu, budget, dark_s, dark_i, network, frame_rate_hz)
    return p.rate, p.car


# ---------------------------------------------------------------------------
# inference


class NoSolutionError(ValueError):
    """The requested rate is beyond what the model can produce."""


def _model_rate(mu, budget, dark_s, dark_i, network, clock_rate, bin_mu_scale=None):
    return car_model_point(mu, budget, dark_s, dark_i, network, clock_rate, bin_mu_scale=bin_mu_scale).rate


def infer_mu_per_pulse(rate: float, budget: LossBudget, clock_rate: float = 1e7,
                       network: Optional[SwitchNetwork] = None, dark_s: float = 0.0, dark_i: float = 0.0,
                       mu_max: float = 50.0, rtol: float = 1e-10) -> float:
    """Invert the model's coincidence rate for the mean pairs per pump pulse."""
    rate = float(rate)
    if not math.isfinite(rate) or rate < 0:
        raise ValueError(f"rate must be finite and >= 0, got {rate!r}")
    floor = _model_rate(0.0, budget, dark_s, dark_i, network, clock_rate)
    if rate <= floor:
        return 0.0
    lo, hi = 0.0, 1e-6
    while _model_rate(hi, budget, dark_s, dark_i, network, clock_rate) < rate:
        lo, hi = hi, hi * 2.0
        if hi > mu_max:
            raise NoSolutionError(f"rate {rate:g}/s exceeds the model maximum for this budget")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _model_rate(mid, budget, dark_s, dark_i, network, clock_rate) < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def infer_mu(rate: float, budget: LossBudget, clock_rate: float = 1e7,
             network: Optional[SwitchNetwork] = None, dark_s: float = 0.0, dark_i: float = 0.0,
             n_bins: int = N_ROUTES) -> float:
    """Mean pairs per clock frame from a measured coincidence rate.

    A NO-MUX frame holds one pump pulse; a MUX frame holds ``n_bins``.
    For small ``mu`` this is ``rate / (clock_rate * eta_s * eta_i)``.
    """
    pulses = 1 if network is None else n_bins
    return pulses * infer_mu_per_pulse(rate, budget, clock_rate, network, dark_s, dark_i)


def p_out_nomux(mu_pulse: float, budget: LossBudget) -> float:
    return output_prob(mu_pulse, budget.eta)


def p_out_mux(mu_pulse: float, budget: LossBudget, net: SwitchNetwork, n_bins: int = N_ROUTES) -> float:
    """Heralded single-photon output probability per frame behind the network.

    Each bin contributes P1 times its own route survival; with equal pumping
    the routes' herald weights are equal and this is
    ``n_bins * P1 * eta * eta_network``.
    """
    return n_bins * output_prob(mu_pulse, budget.eta) * eta_network(net)


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class CarPoint:
    rate: float
    car: float
    mu: float               # per frame
    p_out: float
    rate_err: float = 0.0
    car_err: float = 0.0
    coincidences: int = 0
    accidentals: int = 0
    herald_rate: float = math.nan   # pumped-bin herald clicks per frame
    frames: int = 0
    mu_pulse: float = math.nan


@dataclass(frozen=True)
class CarCurve:
    points: tuple
    label: str = "no_mux"

    def __post_init__(self):
        if self.label not in ("no_mux", "mux"):
            raise ValueError(f"label must be 'no_mux' or 'mux', got {self.label!r}")
        pts = tuple(sorted(self.points, key=lambda p: p.rate))
        if any(not p.rate > 0 for p in pts):
            raise ValueError("curve rates must be positive")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    @property
    def car_span(self) -> tuple[float, float]:
        c = self.column("car")
        return float(c.min()), float(c.max())

    def is_car_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.column("car")) < 0))


def model_curve(mus: Iterable[float], budget: LossBudget, dark_s: float, dark_i: float,
                network: Optional[SwitchNetwork] = None, frame_rate_hz: float = 1e7) -> CarCurve:
    """Analytic curve over per-pulse ``mus``."""
    pts = []
    for m in mus:
        mp = car_model_point(m, budget, dark_s, dark_i, network, frame_rate_hz)
        if network is None:
            pts.append(CarPoint(mp.rate, mp.car, m, p_out_nomux(m, budget), herald_rate=mp.herald_clicks, mu_pulse=m))
        else:
            pts.append(CarPoint(mp.rate, mp.car, N_ROUTES * m, p_out_mux(m, budget, network),
                                herald_rate=mp.herald_clicks, mu_pulse=m))
    return CarCurve(tuple(pts), "no_mux" if network is None else "mux")


def _interp_at_car(curve: CarCurve, car_level: float, attr: str) -> tuple[float, float]:
    """Log-log interpolation of ``attr`` at ``car_level``; returns (value, relative error)."""
    car = curve.column("car")
    lo, hi = curve.car_span
    if not (lo <= car_level <= hi):
        raise ValueError(f"CAR {car_level:g} outside the {curve.label} curve span [{lo:g}, {hi:g}]")
    x = np.log(car)
    y = np.log(curve.column(attr))
    t = math.log(car_level)
    # first segment (from the high-CAR, low-rate end) that brackets the level
    for i in range(len(x) - 1):
        a, b = x[i], x[i + 1]
        if min(a, b) <= t <= max(a, b):
            break
    w = 0.0 if x[i + 1] == x[i] else (t - x[i]) / (x[i + 1] - x[i])
    val = y[i] + w * (y[i + 1] - y[i])
    slope = 0.0 if x[i + 1] == x[i] else (y[i + 1] - y[i]) / (x[i + 1] - x[i])

    def point_var(p):
        sx = p.car_err / p.car if p.car > 0 and math.isfinite(p.car_err) else 0.0
        sy = p.rate_err / p.rate if p.rate > 0 else 0.0
        return sy * sy + slope * slope * sx * sx

    pa, pb = curve.points[i], curve.points[i + 1]
    var = (1 - w) ** 2 * point_var(pa) + w ** 2 * point_var(pb)
    return float(math.exp(val)), math.sqrt(var)


class Enhancement(NamedTuple):
    car_level: float
    p_out_nomux: float
    p_out_mux: float
    factor: float
    factor_err: float


def enhancement_at_car(no_mux: CarCurve, mux: CarCurve, car_level: float) -> Enhancement:
    """MUX over NO-MUX output probability per frame at equal CAR."""
    pn, en = _interp_at_car(no_mux, car_level, "p_out")
    pm, em = _interp_at_car(mux, car_level, "p_out")
    f = pm / pn
    return Enhancement(float(car_level), pn, pm, f, f * math.hypot(en, em))


def ideal_enhancement_at_car(no_mux: CarCurve, mux: CarCurve, car_level: float) -> Enhancement:
    """Ratio of pumped-bin herald-click rates per frame at equal CAR.

    The herald arm never passes the network, so this is the enhancement
    a lossless network would give.
    """
    hn, en = _interp_at_car(no_mux, car_level, "herald_rate")
    hm, em = _interp_at_car(mux, car_level, "herald_rate")
    f = hm / hn
    return Enhancement(float(car_level), hn, hm, f, f * math.hypot(en, em))


def write_enhancement_csv(path, rows: Iterable[Enhancement], header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["car_level", "p_out_nomux", "p_out_mux", "factor", "factor_err"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


# ---------------------------------------------------------------------------
# multiplexing depth

IDEAL_STAGE_GAIN_DB = 3.0   # doubling the modes per switch stage, rounded as usual
BREAK_EVEN_LOSS_DB = IDEAL_STAGE_GAIN_DB


def scaling_gain(k_switches: int, per_switch_loss_db: float) -> float:
    """Net output-probability gain in dB of ``2**k`` multiplexed modes."""
    if int(k_switches) != k_switches or k_switches < 0:
        raise ValueError("k_switches must be a nonnegative integer")
    if per_switch_loss_db < 0:
        raise ValueError("per_switch_loss_db must be >= 0")
    return int(k_switches) * (IDEAL_STAGE_GAIN_DB - float(per_switch_loss_db))


class DesignRow(NamedTuple):
    k: int
    modes: int
    per_switch_loss_db: float
    net_gain_db: float
    p_out: float
    break_even: bool


def design_sweep(loss_grid: Sequence[float], k_grid: Sequence[int], budget: LossBudget = LossBudget(),
                 mu_pulse: float = 0.01) -> list[DesignRow]:
    """Every (k, loss) pair; ``p_out`` scales the per-pulse output probability by the gain, capped at 1."""
    if len(loss_grid) == 0 or len(k_grid) == 0:
        raise ValueError("loss and k grids must be nonempty")
    base = output_prob(mu_pulse, budget.eta)
    rows = []
    for k in k_grid:
        for loss in loss_grid:
            g = scaling_gain(k, loss)
            rows.append(DesignRow(int(k), 2 ** int(k), float(loss), g, min(1.0, base * 10 ** (g / 10)),
                                  math.isclose(loss, BREAK_EVEN_LOSS_DB)))
    return rows


def write_design_csv(path, rows: Iterable[DesignRow], header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "modes", "per_switch_loss_db", "net_gain_db"])
        for r in rows:
            w.writerow([r.k, r.modes, repr(r.per_switch_loss_db), repr(r.net_gain_db)])


def mu_at_car(car_level: float, budget: LossBudget, dark_s: float = 0.0, dark_i: float = 0.0,
              network: Optional[SwitchNetwork] = None, mu_lo: float = 1e-4, mu_hi: float = 10.0,
              rtol: float = 1e-10) -> float:
    """Per-pulse ``mu`` at which the model CAR equals ``car_level`` (high-rate branch)."""
    def car(m):
        return car_model_point(m, budget, dark_s, dark_i, network).car
    if not car(mu_hi) <= car_level <= car(mu_lo):
        raise NoSolutionError(f"CAR {car_level:g} not reachable between mu={mu_lo:g} and {mu_hi:g}")
    lo, hi = mu_lo, mu_hi
    while hi - lo > rtol * hi:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if car(mid) > car_level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
