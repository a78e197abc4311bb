import csv
import math

import numpy as np
import pytest

from tempmux.analysis import (BREAK_EVEN_LOSS_DB, CarCurve, CarPoint, LossBudget, NoSolutionError,
                              car_model, car_model_point, design_sweep, enhancement_at_car, eta_network,
                              infer_mu, infer_mu_per_pulse, model_curve, mu_at_car, p_out_mux, p_out_nomux,
                              scaling_gain, write_design_csv, write_enhancement_csv)
from tempmux.network import SwitchNetwork
from tempmux.stats import output_prob

B = LossBudget()
NET = SwitchNetwork()
DS, DI = 1e-5, 2.5e-6
MUS = np.geomspace(0.003, 0.3, 12)


# inference


def test_infer_mu_round_trip():
    rate, _ = car_model(0.07, B, DS, DI)
    assert infer_mu(rate, B, 1e7, dark_s=DS, dark_i=DI) == pytest.approx(0.07, abs=1e-9)


def test_infer_mu_round_trip_mux_is_per_frame():
    rate, _ = car_model(0.02, B, DS, DI, NET)
    assert infer_mu_per_pulse(rate, B, 1e7, NET, DS, DI) == pytest.approx(0.02, abs=1e-9)
    assert infer_mu(rate, B, 1e7, NET, DS, DI) == pytest.approx(0.08, abs=4e-9)


def test_infer_mu_small_mu_asymptote():
    rate, _ = car_model(0.001, B, 0.0, 0.0)
    approx = rate / (1e7 * B.eta_heralded * B.eta_heralding)
    assert infer_mu(rate, B) == pytest.approx(approx, rel=0.01)


def test_infer_mu_zero_and_floor():
    assert infer_mu(0.0, B) == 0.0
    floor, _ = car_model(0.0, B, DS, DI)
    assert infer_mu(floor, B, dark_s=DS, dark_i=DI) == 0.0


def test_infer_mu_no_solution():
    with pytest.raises(NoSolutionError):
        infer_mu(1e7, B)
    with pytest.raises(ValueError):
        infer_mu(-1.0, B)


# analytic model


@pytest.mark.parametrize("net", [None, NET], ids=["nomux", "mux"])
def test_model_monotone(net):
    c = model_curve(MUS, B, DS, DI, net)
    rates = [car_model(m, B, DS, DI, net)[0] for m in MUS]
    cars = [car_model(m, B, DS, DI, net)[1] for m in MUS]
    assert np.all(np.diff(rates) > 0)
    assert np.all(np.diff(cars) < 0)
    assert c.is_car_decreasing()


def test_model_car_diverges_without_darks():
    cars = [car_model(m, B, 0.0, 0.0)[1] for m in (1e-2, 1e-3, 1e-4)]
    assert cars[1] > 9 * cars[0] and cars[2] > 9 * cars[1]


@pytest.mark.parametrize("net", [None, NET], ids=["nomux", "mux"])
def test_model_car_tends_to_one_when_darks_dominate(net):
    b = LossBudget(1e-9, 1e-9)
    _, car = car_model(0.05, b, 1e-3, 1e-3, net)
    assert car == pytest.approx(1.0, abs=1e-4)


def test_eta_network_is_survival_mean_not_db_mean():
    t = NET.transmissions(include_buffer=True)
    assert eta_network(NET) == pytest.approx(t.mean())
    # Jensen: the survival mean is never below the survival of the mean dB loss
    assert eta_network(NET) > 10 ** (-(NET.mean_route_loss_db() + NET.buffer_loss_db) / 10)
    assert eta_network(NET, [1, 0, 0, 0]) == pytest.approx(t[0])


def test_p_out_formulas():
    assert p_out_nomux(0.01, B) == pytest.approx(output_prob(0.01, 0.5))
    assert p_out_mux(0.01, B, NET) == pytest.approx(4 * output_prob(0.01, 0.5) * eta_network(NET))
    assert p_out_mux(0.01, B, NET.lossless()) == pytest.approx(4 * p_out_nomux(0.01, B))


def test_mu_at_car_inverts_model():
    for net in (None, NET):
        m = mu_at_car(30.0, B, DS, DI, net)
        assert car_model_point(m, B, DS, DI, net).car == pytest.approx(30.0, rel=1e-8)
    with pytest.raises(NoSolutionError):
        mu_at_car(1e6, B, DS, DI)


# curves and enhancement


def _pt(rate, car, p_out=1e-3):
    return CarPoint(rate, car, 0.01, p_out)


def test_curve_sorted_and_validated():
    c = CarCurve((_pt(3.0, 5.0), _pt(1.0, 20.0), _pt(2.0, 10.0)))
    assert list(c.column("rate")) == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        CarCurve((_pt(0.0, 5.0),))
    with pytest.raises(ValueError):
        CarCurve((_pt(1.0, 5.0),), label="other")


def test_identical_curves_give_unity():
    c = model_curve(MUS, B, DS, DI)
    for lv in (10, 30, 100):
        assert enhancement_at_car(c, c, lv).factor == pytest.approx(1.0, abs=1e-12)


def test_out_of_range_raises():
    c = model_curve(MUS, B, DS, DI)
    lo, hi = c.car_span
    with pytest.raises(ValueError):
        enhancement_at_car(c, c, hi * 1.5)
    with pytest.raises(ValueError):
        enhancement_at_car(c, c, lo * 0.5)


def test_interpolation_exact_on_power_law():
    # p_out = car^-2 is a straight line in log-log, so interpolation is exact
    pts = tuple(CarPoint(1.0 / c, c, 0.01, c ** -2.0) for c in (5.0, 20.0, 80.0, 320.0))
    half = tuple(CarPoint(p.rate, p.car, p.mu, 0.5 * p.p_out) for p in pts)
    e = enhancement_at_car(CarCurve(half), CarCurve(pts, "mux"), 40.0)
    assert e.p_out_mux == pytest.approx(40.0 ** -2.0, rel=1e-12)
    assert e.factor == pytest.approx(2.0, rel=1e-12)


def test_lossless_model_enhancement_near_four():
    n = model_curve(MUS, B, DS, DI)
    m = model_curve(MUS, B, DS, DI, NET.lossless())
    for lv in (10, 30, 100):
        assert 3.6 <= enhancement_at_car(n, m, lv).factor <= 4.4


@pytest.mark.parametrize("factor", [0.5, 2.0])
def test_enhancement_invariant_under_common_efficiency(factor):
    # holds while herald clicks per pulse stay rare (small eta_heralding)
    base = LossBudget(0.0025, 0.25)
    scaled = base.scaled_detectors(factor)
    for lv in (10, 20, 50, 100):
        f0 = enhancement_at_car(model_curve(MUS, base, DS, DI), model_curve(MUS, base, DS, DI, NET), lv).factor
        f1 = enhancement_at_car(model_curve(MUS, scaled, DS, DI), model_curve(MUS, scaled, DS, DI, NET), lv).factor
        assert f1 == pytest.approx(f0, rel=0.01)


def test_enhancement_csv_schema(tmp_path):
    n = model_curve(MUS, B, DS, DI)
    m = model_curve(MUS, B, DS, DI, NET)
    p = tmp_path / "e.csv"
    write_enhancement_csv(p, [enhancement_at_car(n, m, lv) for lv in (10, 100)], ["seed=1"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# seed=1"
    assert lines[1] == "car_level,p_out_nomux,p_out_mux,factor,factor_err"
    rows = list(csv.reader(lines[2:]))
    assert len(rows) == 2 and float(rows[1][0]) == 100.0


# scaling law and design explorer


def test_scaling_gain_examples():
    assert scaling_gain(1, 1.0) == 2.0
    assert scaling_gain(0, 2.7) == 0.0
    assert scaling_gain(2, 1.4) == pytest.approx(3.2, abs=1e-12)
    assert scaling_gain(3, BREAK_EVEN_LOSS_DB) == 0.0
    with pytest.raises(ValueError):
        scaling_gain(-1, 1.0)
    with pytest.raises(ValueError):
        scaling_gain(1.5, 1.0)


def test_design_sweep_table():
    rows = design_sweep([0.0, 1.0, 3.0], [0, 1, 2, 3])
    assert len(rows) == 12
    for r in rows:
        assert r.modes == 2 ** r.k
        if r.per_switch_loss_db == 3.0:
            assert r.net_gain_db == 0.0 and r.break_even
        else:
            assert not r.break_even
        if r.per_switch_loss_db == 0.0:
            assert r.net_gain_db == 3 * r.k
    p1 = [r.p_out for r in rows if r.per_switch_loss_db == 1.0]
    assert all(b > a for a, b in zip(p1, p1[1:]))
    assert all(r.p_out <= 1.0 for r in design_sweep([0.0], range(40)))
    with pytest.raises(ValueError):
        design_sweep([], [1])


def test_design_csv_schema(tmp_path):
    p = tmp_path / "d.csv"
    write_design_csv(p, design_sweep([1.0], [1]))
    lines = p.read_text().splitlines()
    assert lines[0] == "k,modes,per_switch_loss_db,net_gain_db"
    assert lines[1] == "1,2,1.0,2.0"


def test_budget_validation():
    with pytest.raises(ValueError):
        LossBudget(1.2, 0.5)
    b = LossBudget.from_components(0.5, 0.8, 0.1, 0.3)
    assert b.eta_heralding == pytest.approx(0.04) and b.eta_heralded == pytest.approx(0.12)
    assert math.isclose(b.eta, b.eta_heralded)
