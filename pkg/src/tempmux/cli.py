"""Command-line front end.

    tempmux CONFIG [--scenario NAME] [--seed N] [--output-dir DIR] [--workers N] [--validate-only]

``CONFIG`` is a TOML file or ``paper_defaults`` for the shipped defaults.
Exit status: 0 success, 2 configuration or usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis, hom, sweeps
from .config import SCENARIOS, ConfigError, build_hom, build_setup, config_hash, load
from .detection import write_car_csv
from .source import simulate_run

log = logging.getLogger("tempmux")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _header(d: dict) -> list[str]:
    return [f"config_sha256={config_hash(d)} seed={d['master_seed']} scenario={d['scenario']}"]


def _curve_csv(path, cr: sweeps.CurveRun, header):
    write_car_csv(path, [(mu, car) for mu, _, car in cr.runs], header)


def _model_csv(path, d, setup, header):
    b = sweeps.budget_of(setup)
    rows = []
    for mu in d["sweep"]["mu_grid"]:
        p = analysis.car_model_point(mu, b, setup.signal.dark_prob_per_bin, setup.herald.dark_prob_per_bin,
                                     setup.network, setup.clock.frame_rate_hz)
        rows.append((mu, p.rate, p.car))
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu", "rate_hz", "car"])
        w.writerows([[repr(float(x)) for x in r] for r in rows])


def _sweep(d, setup, workers):
    s = d["sweep"]
    return sweeps.simulate_car_curve(setup, s["mu_grid"], d["master_seed"], min_frames=int(s["min_frames"]),
                                     target_accidentals=float(s["target_accidentals"]), workers=workers)


def run_car_sweep(d, out: Path, workers: int, mux: bool) -> list[Path]:
    setup = build_setup(d, mux)
    name = "mux" if mux else "nomux"
    cr = _sweep(d, setup, workers)
    h = _header(d)
    paths = [out / f"car_{name}.csv", out / f"car_{name}_model.csv"]
    _curve_csv(paths[0], cr, h)
    _model_csv(paths[1], d, setup, h)
    return paths


def run_enhancement(d, out: Path, workers: int) -> list[Path]:
    h = _header(d)
    levels = d["enhancement"]["car_levels"]
    curves = {}
    variants = [("nomux", build_setup(d, False)), ("mux", build_setup(d, True))]
    if d["enhancement"].get("include_lossless", True):
        variants.append(("mux_lossless", build_setup(d, True, lossless=True)))
    paths = []
    for name, setup in variants:
        curves[name] = _sweep(d, setup, workers)
        paths.append(out / f"car_{name}.csv")
        _curve_csv(paths[-1], curves[name], h)
    tables = [("enhancement.csv", analysis.enhancement_at_car, "mux"),
              ("enhancement_ideal_heralds.csv", analysis.ideal_enhancement_at_car, "mux")]
    if "mux_lossless" in curves:
        tables.append(("enhancement_lossless.csv", analysis.enhancement_at_car, "mux_lossless"))
    for fname, fn, key in tables:
        rows = [fn(curves["nomux"].curve, curves[key].curve, lv) for lv in levels]
        paths.append(out / fname)
        analysis.write_enhancement_csv(paths[-1], rows, h)
        log.info("%s: mean factor %.3f", fname, np.mean([r.factor for r in rows]))
    return paths


def run_histogram(d, out: Path, workers: int) -> list[Path]:
    hcfg = d["histogram"]
    mux = hcfg["source"] == "mux"
    setup = build_setup(d, mux, swap_roles=bool(hcfg.get("swap_roles", False)))
    r = simulate_run(setup, float(hcfg["mu"]), int(hcfg["frames"]), d["master_seed"])
    p = out / f"histogram_{hcfg['source']}.csv"
    r.histogram.to_csv(p, _header(d) + [f"C={r.car.coincidences} A={r.car.accidentals} car={r.car.car!r}"])
    return [p]


def run_hom(d, out: Path, workers: int) -> list[Path]:
    cfg = build_hom(d)
    h = _header(d)
    folds = hom.simulate_fourfold(cfg, d["master_seed"])
    p4 = out / "hom_fourfold.csv"
    v_net = hom.write_hom_csv(p4, folds, h)
    two_cfg = hom.twofold_config(cfg, float(d["hom"]["twofold_car"]))
    two = hom.simulate_twofold(two_cfg, d["master_seed"], int(d["hom"]["twofold_frames"]))
    v2 = hom.visibility([t for t, _ in two], [c for _, c in two])
    p2 = out / "hom_twofold.csv"
    with open(p2, "w", newline="") as fh:
        for line in h:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta_t_ps", "count", "visibility_fit"])
        w.writerows([[repr(t), c, repr(v2)] for t, c in two])
    log.info("four-fold net visibility %.3f, two-fold visibility %.3f", v_net, v2)
    return [p4, p2]


def run_design(d, out: Path, workers: int) -> list[Path]:
    ds = d["design"]
    b = analysis.LossBudget(d["budget"]["eta_heralding"], d["budget"]["eta_heralded"])
    rows = analysis.design_sweep(ds["loss_grid_db"], ds["k_grid"], b, float(ds["mu_pulse"]))
    p = out / "design.csv"
    analysis.write_design_csv(p, rows, _header(d))
    return [p]


def run_delay_scan(d, out: Path, workers: int) -> list[Path]:
    sc = d["delay_scan"]
    setup = build_setup(d, True)
    res = sweeps.scan_switch_delay(setup, tuple(sc["range_ns"]), float(sc["step_ns"]), d["master_seed"],
                                   float(sc["mu"]), int(sc["frames"]), workers)
    p = out / "delay_scan.csv"
    with open(p, "w", newline="") as fh:
        for line in _header(d):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["offset_ns", "coincidences"])
        w.writerows([[repr(o), c] for o, c in res])
    return [p]


RUNNERS = {
    "car_sweep_nomux": lambda d, o, w: run_car_sweep(d, o, w, False),
    "car_sweep_mux": lambda d, o, w: run_car_sweep(d, o, w, True),
    "enhancement": run_enhancement,
    "histogram": run_histogram,
    "hom_scan": run_hom,
    "design_sweep": run_design,
    "delay_scan": run_delay_scan,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tempmux", description="Temporally multiplexed heralded-photon simulator")
    p.add_argument("config", help="TOML config file, or 'paper_defaults'")
    p.add_argument("--scenario", choices=SCENARIOS, help="override the config's scenario")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--validate-only", action="store_true", help="check the config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"scenario": args.scenario, "master_seed": args.seed, "output_dir": args.output_dir,
                 "workers": args.workers}
    try:
        d, diags = load(args.config, overrides)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for x in diags:
        print(str(x), file=sys.stderr)
    if args.validate_only:
        print("config ok")
        return EXIT_OK
    out = Path(d["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            paths = RUNNERS[d["scenario"]](d, out, int(d.get("workers", 1)))
    except Exception as e:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
