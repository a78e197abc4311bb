"""Pump pulse train and pair-generation events.

Times are integer picoseconds internally so that delay arithmetic is exact.
Bin ``b`` of frame ``f`` is generated at ``f * frame_period + b * bin_spacing``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from . import _rng
from .stats import _check_mu, bernoulli_positions, sample_pair_count

PS_PER_NS = 1000
# frames per random stream; fixed so that any partition of a run draws the same numbers
BLOCK_FRAMES = 1 << 20


def ns_to_ps(t_ns: float) -> int:
    return int(round(float(t_ns) * PS_PER_NS))


@dataclass(frozen=True)
class ClockConfig:
    frame_period_ns: float = 100.0
    bins_per_frame: int = 4
    bin_spacing_ns: float = 25.0
    frames: int = 1_000_000

    def __post_init__(self):
        if self.bins_per_frame < 1:
            raise ValueError("bins_per_frame must be positive")
        if self.frames < 1:
            raise ValueError("frames must be positive")
        if self.frame_period_ns <= 0 or self.bin_spacing_ns < 0:
            raise ValueError("clock times must be positive")

    @property
    def frame_period_ps(self) -> int:
        return ns_to_ps(self.frame_period_ns)

    @property
    def bin_spacing_ps(self) -> int:
        return ns_to_ps(self.bin_spacing_ns)

    @property
    def frame_rate_hz(self) -> float:
        return 1e9 / self.frame_period_ns

    @property
    def is_consistent(self) -> bool:
        return self.bin_spacing_ps * self.bins_per_frame == self.frame_period_ps

    def slot_time_ps(self, slots) -> np.ndarray:
        """Generation time of global slot index ``frame * N + bin``."""
        slots = np.asarray(slots, dtype=np.int64)
        n = self.bins_per_frame
        return (slots // n) * self.frame_period_ps + (slots % n) * self.bin_spacing_ps


class PairEvent(NamedTuple):
    frame: int
    bin: int
    pairs: int
    t_gen_ps: int

    @property
    def t_gen_ns(self) -> float:
        return self.t_gen_ps / PS_PER_NS


@dataclass
class PairEvents:
    """Column store of pair events, sorted by generation time."""

    frame: np.ndarray
    bin: np.ndarray
    pairs: np.ndarray
    t_gen_ps: np.ndarray

    @classmethod
    def empty(cls) -> "PairEvents":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy())

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[PairEvent]:
        for f, b, p, t in zip(self.frame, self.bin, self.pairs, self.t_gen_ps):
            yield PairEvent(int(f), int(b), int(p), int(t))

    def __getitem__(self, i) -> PairEvent:
        return PairEvent(int(self.frame[i]), int(self.bin[i]), int(self.pairs[i]), int(self.t_gen_ps[i]))

    @property
    def t_gen_ns(self) -> np.ndarray:
        return self.t_gen_ps / PS_PER_NS

    def slots(self, bins_per_frame: int) -> np.ndarray:
        return self.frame * bins_per_frame + self.bin

    @classmethod
    def concatenate(cls, parts: Sequence["PairEvents"]) -> "PairEvents":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("frame", "bin", "pairs", "t_gen_ps")))

    def to_csv(self, path_or_file, header_lines: Iterable[str] = ()) -> None:
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "bin", "pairs", "t_gen_ps"])
            w.writerows(zip(self.frame.tolist(), self.bin.tolist(), self.pairs.tolist(), self.t_gen_ps.tolist()))
        finally:
            if own:
                fh.close()


def _block_events(cfg: ClockConfig, mu: float, bins: Sequence[int], scales, seed: int, block: int, n_frames: int) -> PairEvents:
    n = cfg.bins_per_frame
    first = block * BLOCK_FRAMES
    mus = [mu * scales[b] for b in bins]
    if len(bins) == n and len(set(mus)) == 1:
        # every slot pumped alike: place pairs on the slot grid directly, already sorted
        m = mus[0]
        if m <= 0:
            return PairEvents.empty()
        rng = _rng.stream(seed, _rng.PAIRS, block)
        slot = first * n + bernoulli_positions(m / (1.0 + m), n_frames * n, rng)
        pair = 1 + sample_pair_count(m, rng, slot.size)
    else:
        slots, pairs = [], []
        for b, m in zip(bins, mus):
            if m <= 0:
                continue
            rng = _rng.stream(seed, _rng.PAIRS, block, b)
            # frames with at least one pair; given n >= 1, n - 1 is again thermal(m)
            hit = bernoulli_positions(m / (1.0 + m), n_frames, rng)
            slots.append((first + hit) * n + b)
            pairs.append(1 + sample_pair_count(m, rng, hit.size))
        if not slots:
            return PairEvents.empty()
        slot = np.concatenate(slots)
        order = np.argsort(slot, kind="stable")
        slot = slot[order]
        pair = np.concatenate(pairs)[order]
    return PairEvents(frame=slot // n, bin=slot % n, pairs=pair, t_gen_ps=cfg.slot_time_ps(slot))


def iter_event_blocks(cfg: ClockConfig, mu_per_pulse: float, active_bins: Iterable[int], seed: int,
                      bin_mu_scale: Sequence[float] | None = None) -> Iterator[PairEvents]:
    """Yield the run's pair events one random-stream block at a time."""
    mu = _check_mu(mu_per_pulse)
    bins = sorted(set(int(b) for b in active_bins))
    if not bins:
        raise ValueError("active_bins must not be empty")
    if bins[0] < 0 or bins[-1] >= cfg.bins_per_frame:
        raise ValueError(f"active bins must lie in [0, {cfg.bins_per_frame})")
    scales = list(bin_mu_scale) if bin_mu_scale is not None else [1.0] * cfg.bins_per_frame
    if len(scales) != cfg.bins_per_frame or any(s < 0 for s in scales):
        raise ValueError("bin_mu_scale needs one non-negative entry per bin")
    n_blocks = -(-cfg.frames // BLOCK_FRAMES)
    for block in range(n_blocks):
        n_frames = min(BLOCK_FRAMES, cfg.frames - block * BLOCK_FRAMES)
        yield _block_events(cfg, mu, bins, scales, seed, block, n_frames)


def generate_events(cfg: ClockConfig, mu_per_pulse: float, active_bins: Iterable[int], seed: int,
                    bin_mu_scale: Sequence[float] | None = None) -> PairEvents:
    """All pair events of a run, in nondecreasing generation time.

    Each active bin of every frame draws an independent thermal pair count;
    bins with zero pairs produce no event.
    """
    return PairEvents.concatenate(list(iter_event_blocks(cfg, mu_per_pulse, active_bins, seed, bin_mu_scale)))
