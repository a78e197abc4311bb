"""Latched switch controller and the lossy two-stage delay network.

Bins are time slots (bin 0 is the earliest pulse of a frame). The route
labels follow the delay table: ``t1`` needs no added delay and is the last
slot of the frame, ``t4`` needs 75 ns and is the first. With four bins,
``label(bin) == f"t{4 - bin}"``.

Stage 1 chooses path ``a`` (bar, no delay) or ``c`` (cross, 25 ns); stage 2
chooses ``b`` (no delay) or ``d`` (50 ns). The three-bit codes are treated as
an opaque lookup; routing physics lives in ``stage_paths``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .timeline import PS_PER_NS, ns_to_ps

N_ROUTES = 4
PATHS = ("a", "b", "c", "d")
STAGE1 = ("a", "c")
STAGE2 = ("b", "d")
CROSS_PATH = "c"


def bin_label(b: int, n_bins: int = N_ROUTES) -> str:
    if not 0 <= b < n_bins:
        raise ValueError(f"bin {b} outside [0, {n_bins})")
    return f"t{n_bins - b}"


def label_bin(label: str, n_bins: int = N_ROUTES) -> int:
    k = int(label.lstrip("t"))
    if not 1 <= k <= n_bins:
        raise ValueError(f"unknown time-bin label {label!r}")
    return n_bins - k


def db_to_transmission(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def _default_codes():
    return {"t1": "000", "t2": "101", "t3": "011", "t4": "110"}


def _default_stage_paths():
    return {"t1": ("a", "b"), "t2": ("c", "b"), "t3": ("a", "d"), "t4": ("c", "d")}


@dataclass(frozen=True)
class RoutingTable:
    codes: dict = field(default_factory=_default_codes)
    stage_paths: dict = field(default_factory=_default_stage_paths)

    def __post_init__(self):
        if set(self.codes) != set(self.stage_paths):
            raise ValueError("codes and stage_paths must cover the same bins")
        if len(set(self.codes.values())) != len(self.codes):
            raise ValueError("switch codes must be distinct")
        for label, code in self.codes.items():
            if len(code) != 3 or set(code) - {"0", "1"}:
                raise ValueError(f"code for {label} must be three binary digits, got {code!r}")
        for label, (p1, p2) in self.stage_paths.items():
            if p1 not in STAGE1 or p2 not in STAGE2:
                raise ValueError(f"bad stage paths for {label}: {(p1, p2)}")

    def code(self, b: int) -> str:
        return self.codes[bin_label(b)]

    def paths(self, b: int) -> tuple[str, str]:
        return tuple(self.stage_paths[bin_label(b)])

    def bin_for_code(self, code: str) -> int:
        for label, c in self.codes.items():
            if c == code:
                return label_bin(label)
        raise ValueError(f"code {code!r} is not in the routing table")


@dataclass(frozen=True)
class SwitchNetwork:
    """Paths a-d behind a fiber buffer.

    ``route_loss_db`` covers the two traversed paths plus the polarization
    controllers on c and d; the buffer is accounted separately.
    """

    path_delay_ns: dict = field(default_factory=lambda: {"a": 0.0, "b": 0.0, "c": 25.0, "d": 50.0})
    path_loss_db: dict = field(default_factory=lambda: {p: 1.35 for p in PATHS})
    pc_loss_db: float = 0.1
    buffer_delay_ns: float = 980.0  # ~200 m of fiber
    buffer_loss_db: float = 0.1
    routing: RoutingTable = field(default_factory=RoutingTable)

    def __post_init__(self):
        for name in ("path_delay_ns", "path_loss_db"):
            table = getattr(self, name)
            if set(table) != set(PATHS):
                raise ValueError(f"{name} needs entries for paths {PATHS}")
        if any(v < 0 for v in self.path_loss_db.values()) or self.pc_loss_db < 0 or self.buffer_loss_db < 0:
            raise ValueError("losses must be non-negative")
        if any(v < 0 for v in self.path_delay_ns.values()) or self.buffer_delay_ns < 0:
            raise ValueError("delays must be non-negative")

    def route_loss_db(self, b: int) -> float:
        total = 0.0
        for p in self.routing.paths(b):
            total += self.path_loss_db[p]
            if p in ("c", "d"):
                total += self.pc_loss_db
        return total

    def mean_route_loss_db(self) -> float:
        return sum(self.route_loss_db(b) for b in range(N_ROUTES)) / N_ROUTES

    def route_transmission(self, b: int, include_buffer: bool = True) -> float:
        loss = self.route_loss_db(b) + (self.buffer_loss_db if include_buffer else 0.0)
        return db_to_transmission(loss)

    def transmissions(self, include_buffer: bool = True) -> np.ndarray:
        return np.array([self.route_transmission(b, include_buffer) for b in range(N_ROUTES)])

    def route_delay_ns(self, b: int) -> float:
        return sum(self.path_delay_ns[p] for p in self.routing.paths(b))

    def route_delays_ps(self) -> np.ndarray:
        return np.array([ns_to_ps(self.route_delay_ns(b)) for b in range(N_ROUTES)], dtype=np.int64)

    def stage1_cross(self) -> np.ndarray:
        return np.array([self.routing.paths(b)[0] == CROSS_PATH for b in range(N_ROUTES)])

    def lossless(self) -> "SwitchNetwork":
        return replace(self, path_loss_db={p: 0.0 for p in PATHS}, pc_loss_db=0.0, buffer_loss_db=0.0)


def required_delay(b: int, net: Optional[SwitchNetwork] = None) -> float:
    """Delay (ns) the network adds to a photon born in bin ``b``."""
    net = net or SwitchNetwork()
    if not 0 <= b < N_ROUTES:
        raise ValueError(f"bin {b} outside [0, {N_ROUTES})")
    return net.route_delay_ns(b)


@dataclass(frozen=True)
class ControllerState:
    latched_code: str = "000"
    last_herald_bin: Optional[int] = None
    phase_offset_ns: float = 0.0


def controller_step(state: ControllerState, herald: Optional[tuple[int, float]] = None,
                    routing: Optional[RoutingTable] = None) -> tuple[ControllerState, str]:
    """Advance the latch by one clock phase.

    A herald ``(bin, t_detect_ns)`` latches that bin's code; without one the
    previous code is held.
    """
    if herald is None:
        return state, state.latched_code
    routing = routing or RoutingTable()
    b = int(herald[0])
    code = routing.code(b)
    return replace(state, latched_code=code, last_herald_bin=b), code


class RoutedPhoton(NamedTuple):
    t_out_ps: int
    route_bin: int
    aligned: bool


def apply_network(photon, code: str, net: SwitchNetwork, rng: np.random.Generator,
                  fresh: bool = True) -> Optional[RoutedPhoton]:
    """Send one photon through the route selected by ``code``.

    The route follows the code, not the photon's own bin, so a stale code
    misroutes. Switch 1 only holds its cross state for the photons of a fresh
    herald; anything else reaching it in that state is dumped.
    """
    route = net.routing.bin_for_code(code)
    if net.routing.paths(route)[0] == CROSS_PATH and not fresh:
        return None
    if rng.random() >= net.route_transmission(route):
        return None
    t_out = int(photon.t_gen_ps) + ns_to_ps(net.buffer_delay_ns) + ns_to_ps(net.route_delay_ns(route))
    return RoutedPhoton(t_out, route, route == int(photon.bin))


# ---------------------------------------------------------------------------
# vectorized controller used by the simulators


def phase_shift_slots(phase_offset_ns: float, bin_spacing_ns: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-photon herald lag, in slots, for an electronic misalignment.

    The switching edge ramps over one bin spacing, so a fractional offset
    splits photons between the two neighbouring integer lags.
    """
    x = phase_offset_ns / bin_spacing_ns
    k = math.floor(x)
    frac = x - k
    if frac == 0.0:
        return np.full(n, k, dtype=np.int64)
    return k + (rng.random(n) < frac).astype(np.int64)


class RouteDecision(NamedTuple):
    route: np.ndarray    # bin whose route the photon takes
    fresh: np.ndarray    # switch 1 was set by a herald for this very slot
    blocked: np.ndarray  # dumped at switch 1
    aligned: np.ndarray  # reaches the common output slot


def resolve_routes(photon_slots: np.ndarray, herald_slots: np.ndarray, prior_herald: Optional[int],
                   stage1_cross: np.ndarray, n_bins: int = N_ROUTES, lag=0,
                   initial_route: int = N_ROUTES - 1) -> RouteDecision:
    """Latched-code semantics for a batch of photons.

    ``herald_slots`` must be sorted global slot indices (``frame * N + bin``)
    of herald clicks; ``prior_herald`` is the last herald before them, if any.
    Before the first herald the controller holds the ``t1`` code.
    """
    photon_slots = np.asarray(photon_slots, dtype=np.int64)
    seen = photon_slots - np.asarray(lag, dtype=np.int64)
    herald_slots = np.asarray(herald_slots, dtype=np.int64)
    idx = np.searchsorted(herald_slots, seen, side="right") - 1
    have = idx >= 0
    fallback = -1 if prior_herald is None else prior_herald
    if herald_slots.size == 0:
        h = np.full(photon_slots.shape, fallback, dtype=np.int64)
    else:
        h = np.where(have, herald_slots[np.maximum(idx, 0)], fallback)
    known = h >= 0
    route = np.where(known, h % n_bins, initial_route)
    fresh = known & (h == seen)
    blocked = stage1_cross[route] & ~fresh
    aligned = ~blocked & (route == photon_slots % n_bins)
    return RouteDecision(route, fresh, blocked, aligned)
