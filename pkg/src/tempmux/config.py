"""Run configuration: TOML files, validation and object construction.

A config file only needs the keys it changes; everything else is taken
from the shipped ``paper_defaults.toml``. Validation never raises: it
returns diagnostics naming the offending field and, when the field came
from a file, the line it sits on.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .detection import DetectorConfig, Gate
from .hom import HomConfig
from .network import PATHS, RoutingTable, SwitchNetwork
from .source import SourceSetup
from .timeline import ClockConfig

SCENARIOS = ("car_sweep_nomux", "car_sweep_mux", "histogram", "hom_scan", "enhancement",
             "design_sweep", "delay_scan")
SWEEP_SCENARIOS = ("car_sweep_nomux", "car_sweep_mux", "enhancement")
DEFAULTS_NAME = "paper_defaults"


class ConfigError(Exception):
    """Config could not be parsed or failed validation."""

    def __init__(self, message: str, diagnostics: Optional[list] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class Diagnostic:
    level: str      # "error" or "warning"
    field: str      # dotted key
    message: str
    line: Optional[int] = None

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.level}: {self.field}: {self.message}"


def defaults_path() -> Path:
    return Path(str(resources.files("tempmux") / "configs" / f"{DEFAULTS_NAME}.toml"))


def _key_lines(text: str) -> dict:
    """Dotted key -> line number, for simple ``key = value`` and ``[table]`` lines."""
    lines = {}
    table = ""
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            table = s.strip("[]").strip()
            lines.setdefault(table, no)
        elif "=" in s:
            key = s.split("=", 1)[0].strip().strip('"')
            lines[f"{table}.{key}" if table else key] = no
    return lines


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("path_delay_ns", "path_loss_db", "codes"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RawConfig:
    data: dict
    lines: dict
    source: str

    def line_of(self, dotted: str) -> Optional[int]:
        parts = dotted.split(".")
        while parts:
            key = ".".join(parts)
            if key in self.lines:
                return self.lines[key]
            parts.pop()
        return None


def load_raw(path) -> RawConfig:
    """Parse a config file and overlay it on the defaults."""
    text = defaults_path().read_text() if str(path) == DEFAULTS_NAME else Path(path).read_text()
    try:
        user = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    base = tomllib.loads(defaults_path().read_text())
    return RawConfig(_merge(base, user), _key_lines(text), str(path))


# ---------------------------------------------------------------------------
# validation


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(cfg) -> list[Diagnostic]:
    """Every invariant of the run configuration; returns diagnostics, never raises."""
    raw = cfg if isinstance(cfg, RawConfig) else RawConfig(cfg, {}, "<dict>")
    d = raw.data
    out: list[Diagnostic] = []
    schema = tomllib.loads(defaults_path().read_text())

    def err(field, msg, level="error"):
        out.append(Diagnostic(level, field, msg, raw.line_of(field)))

    def unknown(section: dict, ref: dict, prefix: str):
        for k, v in section.items():
            name = f"{prefix}.{k}" if prefix else k
            if k not in ref:
                err(name, "unknown field")
            elif isinstance(v, dict) and isinstance(ref[k], dict) and k not in ("path_delay_ns", "path_loss_db", "codes"):
                unknown(v, ref[k], name)

    unknown(d, schema, "")

    def prob(field, x):
        if not _is_num(x) or not 0.0 <= x <= 1.0:
            err(field, f"must be a probability in [0, 1], got {x!r}")
            return False
        return True

    def positive(field, x, integer=False):
        if not _is_num(x) or x <= 0 or (integer and int(x) != x):
            err(field, f"must be a positive {'integer' if integer else 'number'}, got {x!r}")
            return False
        return True

    def nonneg(field, x):
        if not _is_num(x) or x < 0:
            err(field, f"must be a number >= 0, got {x!r}")
            return False
        return True

    if d.get("scenario") not in SCENARIOS:
        err("scenario", f"unknown scenario {d.get('scenario')!r}; choose one of {', '.join(SCENARIOS)}")
    if not isinstance(d.get("master_seed"), int) or isinstance(d.get("master_seed"), bool) or d["master_seed"] < 0:
        err("master_seed", "must be a nonnegative integer")
    if not isinstance(d.get("output_dir"), str) or not d["output_dir"]:
        err("output_dir", "must be a nonempty path")
    if "workers" in d and (not isinstance(d["workers"], int) or d["workers"] < 1):
        err("workers", "must be an integer >= 1")

    c = d.get("clock", {})
    ok = [positive("clock.frame_period_ns", c.get("frame_period_ns")),
          positive("clock.bins_per_frame", c.get("bins_per_frame"), integer=True),
          positive("clock.bin_spacing_ns", c.get("bin_spacing_ns"))]
    if all(ok) and not math.isclose(c["bins_per_frame"] * c["bin_spacing_ns"], c["frame_period_ns"]):
        err("clock.bin_spacing_ns", f"bins_per_frame * bin_spacing_ns = {c['bins_per_frame'] * c['bin_spacing_ns']:g} ns "
            f"differs from frame_period_ns = {c['frame_period_ns']:g} ns")
    if ok[1] and c["bins_per_frame"] != 4:
        err("clock.bins_per_frame", "the switching network multiplexes exactly 4 bins")

    n = d.get("network", {})
    for table in ("path_delay_ns", "path_loss_db"):
        t = n.get(table, {})
        if not isinstance(t, dict) or set(t) != set(PATHS):
            err(f"network.{table}", f"needs exactly the paths {', '.join(PATHS)}")
            continue
        for p, v in t.items():
            nonneg(f"network.{table}.{p}", v)
    nonneg("network.pc_loss_db", n.get("pc_loss_db"))
    nonneg("network.buffer_delay_ns", n.get("buffer_delay_ns"))
    if nonneg("network.buffer_loss_db", n.get("buffer_loss_db")) and n["buffer_loss_db"] > 0.1:
        err("network.buffer_loss_db", f"{n['buffer_loss_db']} dB is above the 0.1 dB of a short buffer fiber", "warning")
    codes = n.get("codes", {})
    try:
        RoutingTable(dict(codes)) if isinstance(codes, dict) else RoutingTable(codes)
    except (ValueError, TypeError, KeyError) as e:
        err("network.codes", str(e))
    if not any(x.level == "error" and x.field.startswith("network") for x in out):
        try:
            net = build_network(d)
            for b in range(4):
                loss = net.route_loss_db(b)
                if loss < 0.5:
                    err("network.path_loss_db", f"route {b} loses only {loss:.2f} dB; real switch routes lose more", "warning")
                    break
        except (ValueError, TypeError, KeyError) as e:
            err("network", str(e))

    prob("budget.eta_heralding", d.get("budget", {}).get("eta_heralding"))
    prob("budget.eta_heralded", d.get("budget", {}).get("eta_heralded"))
    for role in ("heralding", "heralded"):
        det = d.get("detectors", {}).get(role, {})
        prob(f"detectors.{role}.dark_prob_per_bin", det.get("dark_prob_per_bin"))
        if det.get("gate") not in [g.value for g in Gate]:
            err(f"detectors.{role}.gate", f"unknown gate {det.get('gate')!r}")

    s = d.get("sweep", {})
    grid = s.get("mu_grid")
    if not isinstance(grid, list) or len(grid) == 0:
        level = "error" if d.get("scenario") in SWEEP_SCENARIOS else "warning"
        err("sweep.mu_grid", "must be a nonempty list", level)
    else:
        for i, m in enumerate(grid):
            if not _is_num(m) or m <= 0:
                err("sweep.mu_grid", f"entry {i} must be a positive number, got {m!r}")
    positive("sweep.min_frames", s.get("min_frames"), integer=True)
    nonneg("sweep.target_accidentals", s.get("target_accidentals"))

    levels = d.get("enhancement", {}).get("car_levels")
    if not isinstance(levels, list) or not levels or any(not _is_num(x) or x <= 1 for x in levels):
        err("enhancement.car_levels", "must be a nonempty list of CAR values > 1")

    h = d.get("histogram", {})
    if h.get("source") not in ("mux", "no_mux"):
        err("histogram.source", "must be 'mux' or 'no_mux'")
    nonneg("histogram.mu", h.get("mu"))
    positive("histogram.frames", h.get("frames"), integer=True)

    hom = d.get("hom", {})
    positive("hom.overlap_sigma_ps", hom.get("overlap_sigma_ps"))
    prob("hom.intrinsic_overlap_max", hom.get("intrinsic_overlap_max"))
    for k in ("mu_source1", "mu_source2"):
        nonneg(f"hom.{k}", hom.get(k))
    for k in ("herald1_efficiency", "herald2_efficiency", "arm1_efficiency", "arm2_efficiency",
              "herald_dark_prob_per_bin", "output_dark_prob"):
        prob(f"hom.{k}", hom.get(k))
    positive("hom.frames", hom.get("frames"), integer=True)
    positive("hom.twofold_frames", hom.get("twofold_frames"), integer=True)
    positive("hom.twofold_car", hom.get("twofold_car"))
    g = hom.get("delay_grid_ps")
    if not isinstance(g, list) or len(g) < 4 or any(not _is_num(x) for x in g):
        err("hom.delay_grid_ps", "needs at least four delays")

    ds = d.get("design", {})
    for k in ("k_grid", "loss_grid_db"):
        v = ds.get(k)
        if not isinstance(v, list) or not v:
            err(f"design.{k}", "must be a nonempty list")
    if isinstance(ds.get("k_grid"), list) and any(not isinstance(k, int) or k < 0 for k in ds["k_grid"]):
        err("design.k_grid", "switch counts must be nonnegative integers")
    if isinstance(ds.get("loss_grid_db"), list) and any(not _is_num(x) or x < 0 for x in ds["loss_grid_db"]):
        err("design.loss_grid_db", "losses must be numbers >= 0")
    nonneg("design.mu_pulse", ds.get("mu_pulse"))

    sc = d.get("delay_scan", {})
    r = sc.get("range_ns")
    if not isinstance(r, list) or len(r) != 2 or not all(_is_num(x) for x in r):
        err("delay_scan.range_ns", "must be [start, stop]")
    elif r[1] < r[0]:
        err("delay_scan.range_ns", f"empty range [{r[0]}, {r[1]}]")
    positive("delay_scan.step_ns", sc.get("step_ns"))
    nonneg("delay_scan.mu", sc.get("mu"))
    positive("delay_scan.frames", sc.get("frames"), integer=True)
    return out


# ---------------------------------------------------------------------------
# construction


def build_network(d: dict, lossless: bool = False) -> SwitchNetwork:
    n = d["network"]
    net = SwitchNetwork(
        path_delay_ns={k: float(v) for k, v in n["path_delay_ns"].items()},
        path_loss_db={k: float(v) for k, v in n["path_loss_db"].items()},
        pc_loss_db=float(n["pc_loss_db"]),
        buffer_delay_ns=float(n["buffer_delay_ns"]),
        buffer_loss_db=float(n["buffer_loss_db"]),
        routing=RoutingTable(dict(n["codes"])),
    )
    return net.lossless() if lossless else net


def build_setup(d: dict, mux: bool, lossless: bool = False, swap_roles: bool = False) -> SourceSetup:
    c = d["clock"]
    clock = ClockConfig(float(c["frame_period_ns"]), int(c["bins_per_frame"]), float(c["bin_spacing_ns"]))
    b = d["budget"]
    det = d["detectors"]
    herald = DetectorConfig(float(b["eta_heralding"]), float(det["heralding"]["dark_prob_per_bin"]),
                            Gate(det["heralding"]["gate"]))
    signal = DetectorConfig(float(b["eta_heralded"]), float(det["heralded"]["dark_prob_per_bin"]),
                            Gate(det["heralded"]["gate"]))
    return SourceSetup(clock, herald, signal, build_network(d, lossless) if mux else None, swap_roles=swap_roles)


def build_hom(d: dict) -> HomConfig:
    h = d["hom"]
    dark = float(h["herald_dark_prob_per_bin"])
    return HomConfig(
        overlap_sigma_ps=float(h["overlap_sigma_ps"]),
        intrinsic_overlap_max=float(h["intrinsic_overlap_max"]),
        mu_source1=float(h["mu_source1"]),
        mu_source2=float(h["mu_source2"]),
        herald1=DetectorConfig(float(h["herald1_efficiency"]), dark, Gate.FREE_RUNNING),
        herald2=DetectorConfig(float(h["herald2_efficiency"]), dark, Gate.FREE_RUNNING),
        arm1_efficiency=float(h["arm1_efficiency"]),
        arm2_efficiency=float(h["arm2_efficiency"]),
        output_dark_prob=float(h["output_dark_prob"]),
        network=build_network(d),
        delay_grid_ps=tuple(float(x) for x in h["delay_grid_ps"]),
        frames=int(h["frames"]),
    )


def config_hash(d: dict) -> str:
    """SHA-256 of the canonical config, ignoring settings that cannot change results."""
    canon = {k: v for k, v in d.items() if k not in ("output_dir", "workers")}
    return hashlib.sha256(json.dumps(canon, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load(path, overrides: Optional[dict] = None) -> tuple[dict, list[Diagnostic]]:
    """Parse, overlay, apply ``overrides`` and validate. Raises ConfigError on errors."""
    raw = load_raw(path)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw.data[k] = v
    diags = validate(raw)
    errors = [x for x in diags if x.level == "error"]
    if errors:
        raise ConfigError("\n".join(f"{raw.source}: {x}" for x in errors), diags)
    return raw.data, diags
