"""Threshold detectors, TIA delay histograms and CAR peak accounting."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from .stats import _check_prob, bernoulli_positions
from .timeline import PS_PER_NS

WINDOW_NS = (0, 250)
BIN_WIDTH_NS = 1
PEAK_HALF_WIDTH_NS = 2


class Gate(str, Enum):
    FREE_RUNNING = "free_running_40MHz_bins"
    GATED = "gated_10MHz"


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float
    dark_prob_per_bin: float = 0.0
    gate: Gate = Gate.FREE_RUNNING

    def __post_init__(self):
        _check_prob(self.efficiency, "efficiency")
        _check_prob(self.dark_prob_per_bin, "dark_prob_per_bin")
        object.__setattr__(self, "gate", Gate(self.gate))


@dataclass
class DetectionRecords:
    """Clicks of one detector, time sorted.

    ``is_dark`` is simulation truth: the click would not have happened
    without a dark count.
    """

    detector: str
    time_ps: np.ndarray
    grid_bin: np.ndarray
    is_dark: np.ndarray

    def __len__(self) -> int:
        return len(self.time_ps)


def detect(grid_bins, photons, cfg: DetectorConfig, n_grid: int, rng: np.random.Generator, *,
           period_ps: int, t0_ps: int = 0, name: str = "det",
           dark_rng: Optional[np.random.Generator] = None) -> DetectionRecords:
    """Clicks of a threshold detector on a regular time grid.

    ``grid_bins`` are the grid cells (gates or 25 ns bins) that photons arrive
    in and ``photons`` the photon numbers. Each photon is detected with
    ``cfg.efficiency``; a cell clicks at most once however many photons it
    holds. Every cell also fires a dark count with ``cfg.dark_prob_per_bin``.
    """
    grid_bins = np.asarray(grid_bins, dtype=np.int64)
    photons = np.asarray(photons, dtype=np.int64)
    if grid_bins.size:
        if grid_bins.size == 1 or np.all(grid_bins[1:] > grid_bins[:-1]):
            cells, n_cell = grid_bins, photons  # already one entry per cell
        else:
            cells, inv = np.unique(grid_bins, return_inverse=True)
            n_cell = np.bincount(inv, weights=photons).astype(np.int64)
        real = cells[rng.binomial(n_cell, cfg.efficiency) > 0]
    else:
        real = np.empty(0, dtype=np.int64)
    dark = bernoulli_positions(cfg.dark_prob_per_bin, n_grid, dark_rng if dark_rng is not None else rng)
    clicks = np.union1d(real, dark)
    is_dark = ~np.isin(clicks, real, assume_unique=True)
    return DetectionRecords(name, t0_ps + clicks * int(period_ps), clicks, is_dark)


@dataclass
class DelayHistogram:
    counts: np.ndarray
    bin_width_ns: int = BIN_WIDTH_NS
    window_ns: tuple = WINDOW_NS
    start_role: str = "heralded"
    stop_role: str = "heralding"

    @classmethod
    def zeros(cls, **kw) -> "DelayHistogram":
        w = kw.get("window_ns", WINDOW_NS)
        width = kw.get("bin_width_ns", BIN_WIDTH_NS)
        return cls(np.zeros((w[1] - w[0]) // width, dtype=np.int64), **kw)

    @property
    def delays_ns(self) -> np.ndarray:
        return self.window_ns[0] + self.bin_width_ns * np.arange(len(self.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "DelayHistogram") -> "DelayHistogram":
        if (self.window_ns, self.bin_width_ns) != (other.window_ns, other.bin_width_ns):
            raise ValueError("histograms with different binning cannot be merged")
        return DelayHistogram(self.counts + other.counts, self.bin_width_ns, self.window_ns,
                              self.start_role, self.stop_role)

    def peak_sum(self, center_ns: float, half_width_ns: float = PEAK_HALF_WIDTH_NS) -> int:
        d = self.delays_ns
        sel = (d >= center_ns - half_width_ns) & (d <= center_ns + half_width_ns)
        return int(self.counts[sel].sum())

    def to_csv(self, path, header_lines: Iterable[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delay_ns", "count"])
            w.writerows(zip(self.delays_ns.tolist(), self.counts.tolist()))


def build_histogram(starts_ps, stops_ps, *, offset_ps: int = 0, window_ns=WINDOW_NS,
                    bin_width_ns: int = BIN_WIDTH_NS, swap_roles: bool = False,
                    start_role: str = "heralded", stop_role: str = "heralding") -> DelayHistogram:
    """Accumulate every start-stop delay ``stop - start + offset`` inside the window.

    Both inputs must be sorted. ``swap_roles`` exchanges start and stop.
    """
    starts = np.asarray(starts_ps, dtype=np.int64)
    stops = np.asarray(stops_ps, dtype=np.int64)
    if swap_roles:
        starts, stops = stops, starts
        start_role, stop_role = stop_role, start_role
    lo_ps = window_ns[0] * PS_PER_NS
    hi_ps = window_ns[1] * PS_PER_NS
    lo = np.searchsorted(stops, starts + lo_ps - offset_ps, side="left")
    hi = np.searchsorted(stops, starts + hi_ps - offset_ps, side="left")
    n = hi - lo
    total = int(n.sum())
    n_bins = (window_ns[1] - window_ns[0]) // bin_width_ns
    if total == 0:
        counts = np.zeros(n_bins, dtype=np.int64)
    else:
        first = np.repeat(lo - (np.cumsum(n) - n), n)
        idx = first + np.arange(total)
        delay = stops[idx] - np.repeat(starts, n) + offset_ps - lo_ps
        counts = np.bincount(delay // (bin_width_ns * PS_PER_NS), minlength=n_bins).astype(np.int64)
    return DelayHistogram(counts, bin_width_ns, tuple(window_ns), start_role, stop_role)


# ---------------------------------------------------------------------------
# peak positions


@dataclass(frozen=True)
class NoMuxPeaks:
    coincidence_ns: float
    accidental_ns: float

    def mirrored(self, span_ns: float) -> "NoMuxPeaks":
        return NoMuxPeaks(span_ns - self.coincidence_ns, span_ns - self.accidental_ns)


@dataclass(frozen=True)
class MuxPeaks:
    """Coincidence and same-slot previous-frame accidental peaks, keyed by bin."""

    coincidence_ns: Mapping[int, float]
    accidental_ns: Mapping[int, float]
    visible: tuple = (3, 1)  # t1 and t3 keep switch 1 in bar

    def mirrored(self, span_ns: float) -> "MuxPeaks":
        return MuxPeaks({b: span_ns - x for b, x in self.coincidence_ns.items()},
                        {b: span_ns - x for b, x in self.accidental_ns.items()}, self.visible)

    @property
    def suppressed(self) -> tuple:
        return tuple(b for b in sorted(self.accidental_ns) if b not in self.visible)


def nomux_peaks(frame_period_ns: float = 100.0, coincidence_ns: float = 125.0) -> NoMuxPeaks:
    return NoMuxPeaks(coincidence_ns, coincidence_ns - frame_period_ns)


def mux_peaks(n_bins: int = 4, bin_spacing_ns: float = 25.0, frame_period_ns: float = 100.0,
              first_coincidence_ns: float = 125.0) -> MuxPeaks:
    coinc = {b: first_coincidence_ns + b * bin_spacing_ns for b in range(n_bins)}
    acc = {b: c - frame_period_ns for b, c in coinc.items()}
    return MuxPeaks(coinc, acc)


# ---------------------------------------------------------------------------
# CAR


@dataclass(frozen=True)
class CarResult:
    coincidences: int
    accidentals: int
    car: float
    rate_hz: float = math.nan
    infinite: bool = False

    @property
    def car_err(self) -> float:
        """Poisson propagation: sigma_CAR / CAR = sqrt(1/C + 1/A)."""
        if self.infinite or self.coincidences == 0:
            return math.inf
        return self.car * math.sqrt(1.0 / self.coincidences + 1.0 / self.accidentals)

    @property
    def rate_err(self) -> float:
        if self.coincidences == 0:
            return math.nan
        return self.rate_hz / math.sqrt(self.coincidences)


def _ratio(c: int, a: int, duration_s: Optional[float]) -> CarResult:
    rate = c / duration_s if duration_s else math.nan
    if a == 0:
        warnings.warn("no accidental counts; CAR reported as infinite", RuntimeWarning, stacklevel=3)
        return CarResult(c, a, math.inf, rate, True)
    return CarResult(c, a, c / a, rate)


def car_no_mux(hist: DelayHistogram, peaks: NoMuxPeaks, duration_s: Optional[float] = None) -> CarResult:
    c = hist.peak_sum(peaks.coincidence_ns)
    a = hist.peak_sum(peaks.accidental_ns)
    return _ratio(c, a, duration_s)


def car_mux(hist: DelayHistogram, peaks: MuxPeaks, duration_s: Optional[float] = None) -> CarResult:
    """Four coincidence peaks summed; twice the two visible accidental peaks."""
    c = sum(hist.peak_sum(x) for x in peaks.coincidence_ns.values())
    a = 2 * sum(hist.peak_sum(peaks.accidental_ns[b]) for b in peaks.visible)
    return _ratio(c, a, duration_s)


def car_from_counts(c: int, a: int) -> CarResult:
    return _ratio(int(c), int(a), None)


def write_car_csv(path, rows, header_lines: Iterable[str] = ()) -> None:
    """Rows of ``(mu, CarResult)``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu", "rate_hz", "C", "A", "car", "car_err"])
        for mu, r in rows:
            w.writerow([repr(float(mu)), repr(float(r.rate_hz)), r.coincidences, r.accidentals,
                        repr(float(r.car)), repr(float(r.car_err))])
