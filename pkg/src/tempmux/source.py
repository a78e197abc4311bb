"""Monte Carlo of the NO-MUX and MUX sources up to the TIA histogram.

A run is processed one random-stream block of frames at a time. Herald
clicks of the following block are generated before a block's photons are
routed, so negative electronic offsets can look ahead across the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _rng
from .detection import (DetectionRecords, DetectorConfig, DelayHistogram, Gate, build_histogram, car_mux,
                        car_no_mux, detect, mux_peaks, nomux_peaks, CarResult, WINDOW_NS)
from .network import SwitchNetwork, phase_shift_slots, resolve_routes
from .timeline import BLOCK_FRAMES, ClockConfig, PairEvents, _block_events, ns_to_ps
from .stats import _check_mu

# where the first coincidence peak is placed in the 0-250 ns window
FIRST_PEAK_NS = 125.0


@dataclass(frozen=True)
class SourceSetup:
    """One source configuration: MUX when ``network`` is given, NO-MUX otherwise."""

    clock: ClockConfig = field(default_factory=ClockConfig)
    herald: DetectorConfig = field(default_factory=lambda: DetectorConfig(0.01, 2.5e-6, Gate.FREE_RUNNING))
    signal: DetectorConfig = field(default_factory=lambda: DetectorConfig(0.5, 1e-5, Gate.GATED))
    network: Optional[SwitchNetwork] = None
    nomux_bin: int = 3
    bin_mu_scale: Optional[tuple] = None
    swap_roles: bool = False

    @property
    def is_mux(self) -> bool:
        return self.network is not None

    @property
    def active_bins(self) -> tuple:
        return tuple(range(self.clock.bins_per_frame)) if self.is_mux else (self.nomux_bin,)

    def output_offset_ps(self) -> int:
        """Arrival of an aligned photon at the signal gate, relative to its frame start."""
        c = self.clock
        if self.is_mux:
            last = c.bins_per_frame - 1
            return last * c.bin_spacing_ps + ns_to_ps(self.network.buffer_delay_ns) + int(self.network.route_delays_ps()[last])
        return self.nomux_bin * c.bin_spacing_ps

    def electronic_offset_ps(self) -> int:
        """Delay added to herald stops so the first coincidence peak sits at ``FIRST_PEAK_NS``."""
        c = self.clock
        first_bin = 0 if self.is_mux else self.nomux_bin
        return ns_to_ps(FIRST_PEAK_NS) + self.output_offset_ps() - first_bin * c.bin_spacing_ps

    def peaks(self):
        c = self.clock
        if self.is_mux:
            return mux_peaks(c.bins_per_frame, c.bin_spacing_ns, c.frame_period_ns, FIRST_PEAK_NS)
        return nomux_peaks(c.frame_period_ns, FIRST_PEAK_NS)


@dataclass
class RunResult:
    frames: int
    heralds: DetectionRecords
    signals: DetectionRecords
    histogram: DelayHistogram
    car: CarResult
    routed_aligned: int = 0
    routed_misaligned: int = 0
    routed_blocked: int = 0

    frame_rate_hz: float = 1e7
    active_bins: tuple = ()
    bins_per_frame: int = 4

    @property
    def duration_s(self) -> float:
        return self.frames / self.frame_rate_hz

    @property
    def herald_rate_per_frame(self) -> float:
        return len(self.heralds) / self.frames

    @property
    def pumped_herald_rate_per_frame(self) -> float:
        """Herald clicks per frame in bins that carry pump pulses."""
        pos = self.heralds.grid_bin % self.bins_per_frame
        return float(np.isin(pos, self.active_bins).sum()) / self.frames


def _merge(name, parts: Sequence[DetectionRecords]) -> DetectionRecords:
    if not parts:
        e = np.empty(0, dtype=np.int64)
        return DetectionRecords(name, e, e.copy(), np.empty(0, dtype=bool))
    return DetectionRecords(name, np.concatenate([p.time_ps for p in parts]),
                            np.concatenate([p.grid_bin for p in parts]),
                            np.concatenate([p.is_dark for p in parts]))


def _heralds(setup: SourceSetup, ev: PairEvents, seed: int, block: int, n_frames: int) -> DetectionRecords:
    c = setup.clock
    n = c.bins_per_frame
    first_slot = block * BLOCK_FRAMES * n
    rec = detect(ev.slots(n) - first_slot, ev.pairs, setup.herald, n_frames * n,
                 _rng.stream(seed, _rng.HERALD, block), period_ps=c.bin_spacing_ps,
                 t0_ps=block * BLOCK_FRAMES * c.frame_period_ps, name="herald",
                 dark_rng=_rng.stream(seed, _rng.HERALD_DARK, block))
    rec.grid_bin = rec.grid_bin + first_slot  # global slot index
    return rec


def simulate_run(setup: SourceSetup, mu_per_pulse: float, frames: int, seed: int,
                 phase_offset_ns: float = 0.0) -> RunResult:
    """Simulate ``frames`` clock periods and build the CAR histogram."""
    _check_mu(mu_per_pulse)
    c = ClockConfig(setup.clock.frame_period_ns, setup.clock.bins_per_frame, setup.clock.bin_spacing_ns, int(frames))
    n = c.bins_per_frame
    net = setup.network
    if net is not None and n != 4:
        raise ValueError("the switching network multiplexes exactly four bins")
    scales = list(setup.bin_mu_scale) if setup.bin_mu_scale is not None else [1.0] * n
    n_blocks = -(-c.frames // BLOCK_FRAMES)

    def block_data(block):
        nf = min(BLOCK_FRAMES, c.frames - block * BLOCK_FRAMES)
        ev = _block_events(c, mu_per_pulse, setup.active_bins, scales, seed, block, nf)
        return ev, _heralds(setup, ev, seed, block, nf), nf

    if net is not None:
        trans = net.transmissions(include_buffer=True)
        cross = net.stage1_cross()
    out_offset = setup.output_offset_ps()
    herald_parts, signal_parts = [], []
    counts = np.zeros(3, dtype=np.int64)
    prior = None
    nxt = block_data(0)
    for block in range(n_blocks):
        ev, her, nf = nxt
        nxt = block_data(block + 1) if block + 1 < n_blocks else None
        herald_parts.append(her)
        slots = ev.slots(n)
        rng_sig = _rng.stream(seed, _rng.SIGNAL, block)
        if net is None:
            frames_hit = ev.frame
            photons = ev.pairs
        else:
            lag = phase_shift_slots(phase_offset_ns, c.bin_spacing_ns, len(ev), _rng.stream(seed, _rng.SWITCH, block))
            her_slots = her.grid_bin if nxt is None else np.concatenate([her.grid_bin, nxt[1].grid_bin])
            dec = resolve_routes(slots, her_slots, prior, cross, n, lag)
            counts += [dec.aligned.sum(), (~dec.aligned & ~dec.blocked).sum(), dec.blocked.sum()]
            keep = dec.aligned
            # network loss and buffer, then the gated detector's own efficiency
            photons = rng_sig.binomial(ev.pairs[keep], trans[dec.route[keep]])
            frames_hit = ev.frame[keep]
            if len(her):
                prior = int(her.grid_bin[-1])
        first_frame = block * BLOCK_FRAMES
        sig = detect(frames_hit - first_frame, photons, setup.signal, nf, rng_sig,
                     period_ps=c.frame_period_ps, t0_ps=first_frame * c.frame_period_ps + out_offset,
                     name="signal", dark_rng=_rng.stream(seed, _rng.SIGNAL_DARK, block))
        sig.grid_bin = sig.grid_bin + first_frame
        signal_parts.append(sig)

    heralds = _merge("herald", herald_parts)
    signals = _merge("signal", signal_parts)
    offset = setup.electronic_offset_ps()
    peaks = setup.peaks()
    if setup.swap_roles:
        # swapped roles mirror every delay d into (window - d)
        offset = WINDOW_NS[1] * 1000 - offset
        peaks = peaks.mirrored(WINDOW_NS[1])
    hist = build_histogram(signals.time_ps, heralds.time_ps, offset_ps=offset, swap_roles=setup.swap_roles)
    duration = c.frames / c.frame_rate_hz
    car = car_mux(hist, peaks, duration) if setup.is_mux else car_no_mux(hist, peaks, duration)
    return RunResult(c.frames, heralds, signals, hist, car, *counts.tolist(), frame_rate_hz=c.frame_rate_hz,
                     active_bins=setup.active_bins, bins_per_frame=n)
