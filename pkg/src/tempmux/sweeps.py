"""Monte Carlo sweeps: CAR curves and the switch-delay scan.

Each sweep point is an independent run with its own derived seed, so the
points can be farmed out to worker processes without changing any result.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _rng
from .analysis import (CarCurve, CarPoint, LossBudget, car_model_point, infer_mu_per_pulse, p_out_mux,
                       p_out_nomux)
from .network import N_ROUTES
from .source import RunResult, SourceSetup, simulate_run

CURVE = 8
SCAN = 9

MIN_FRAMES = 10_000_000


def budget_of(setup: SourceSetup) -> LossBudget:
    return LossBudget(setup.herald.efficiency, setup.signal.efficiency)


def frames_for(setup: SourceSetup, mu_pulse: float, target_accidentals: float,
               min_frames: int = MIN_FRAMES, max_frames: int = 20_000_000_000) -> int:
    """Frames needed for the model to expect ``target_accidentals`` events in the counted accidental peaks.

    MUX doubles its two visible peaks, so the MUX accidental count A holds
    ``A / 2`` events and the target applies to those.
    """
    mp = car_model_point(mu_pulse, budget_of(setup), setup.signal.dark_prob_per_bin,
                         setup.herald.dark_prob_per_bin, setup.network, setup.clock.frame_rate_hz,
                         bin_mu_scale=setup.bin_mu_scale)
    per_frame = mp.accidental / 2.0 if setup.is_mux else mp.accidental
    need = math.ceil(target_accidentals / per_frame) if per_frame > 0 else min_frames
    return int(min(max(need, min_frames), max_frames))


def _map(fn: Callable, args: Sequence, workers: int):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*args)))


def _run(setup, mu, frames, seed, phase_offset_ns=0.0) -> RunResult:
    return simulate_run(setup, mu, frames, seed, phase_offset_ns)


def point_from_run(setup: SourceSetup, run: RunResult) -> CarPoint:
    """Turn a measured run into a curve point through the inference chain.

    The coincidence rate is inverted for the per-pulse mean pair number,
    which then gives the output probability per frame.
    """
    budget = budget_of(setup)
    car = run.car
    mu = infer_mu_per_pulse(car.rate_hz, budget, setup.clock.frame_rate_hz, setup.network,
                            setup.signal.dark_prob_per_bin, setup.herald.dark_prob_per_bin)
    if setup.is_mux:
        p_out, mu_frame = p_out_mux(mu, budget, setup.network), N_ROUTES * mu
    else:
        p_out, mu_frame = p_out_nomux(mu, budget), mu
    return CarPoint(car.rate_hz, car.car, mu_frame, p_out, car.rate_err, car.car_err,
                    car.coincidences, car.accidentals, run.pumped_herald_rate_per_frame, run.frames, mu)


@dataclass(frozen=True)
class CurveRun:
    curve: CarCurve
    runs: tuple           # (mu_pulse, frames, CarResult) per grid point, grid order
    setup: SourceSetup


def simulate_car_curve(setup: SourceSetup, mu_grid: Sequence[float], seed: int, *,
                       frames: Optional[int] = None, target_accidentals: float = 0.0,
                       min_frames: int = MIN_FRAMES, workers: int = 1) -> CurveRun:
    """MC CAR curve over per-pulse ``mu_grid``.

    With ``frames`` every point runs that many frames; otherwise each point
    runs long enough to expect ``target_accidentals`` accidentals, and never
    fewer than ``min_frames``.
    """
    if len(mu_grid) == 0:
        raise ValueError("mu_grid must not be empty")
    args = []
    for i, mu in enumerate(mu_grid):
        n = int(frames) if frames is not None else frames_for(setup, mu, target_accidentals, min_frames)
        args.append((setup, float(mu), n, _rng.derive_seed(seed, CURVE, i)))
    runs = _map(_run, args, workers)
    pts = tuple(point_from_run(setup, r) for r in runs)
    label = "mux" if setup.is_mux else "no_mux"
    return CurveRun(CarCurve(pts, label), tuple((a[1], a[2], r.car) for a, r in zip(args, runs)), setup)


def scan_switch_delay(setup: SourceSetup, delay_range: tuple[float, float], step: float, seed: int,
                      mu_pulse: float = 0.05, frames: int = 2_000_000, workers: int = 1):
    """Coincidences against the controller's electronic phase offset.

    Returns ``[(offset_ns, coincidences), ...]`` over ``delay_range``
    inclusive. Every offset reuses the same pair and detection streams, so
    only the switching differs between points.
    """
    if not setup.is_mux:
        raise ValueError("the delay scan needs a switching network")
    if not step > 0:
        raise ValueError("step must be > 0")
    lo, hi = float(delay_range[0]), float(delay_range[1])
    if hi < lo:
        raise ValueError(f"empty delay range [{lo}, {hi}]")
    offsets = lo + step * np.arange(int(math.floor((hi - lo) / step + 1e-9)) + 1)
    args = [(setup, mu_pulse, frames, seed, float(o)) for o in offsets]
    runs = _map(_run, args, workers)
    return [(float(o), r.car.coincidences) for o, r in zip(offsets, runs)]
