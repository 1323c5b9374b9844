import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phevmpc import powertrain as pt
from phevmpc.params import BatteryParams, DrivetrainParams, EngineMap, load_params, quad2

P = load_params()
VEH = P.vehicle
# ratios chosen so engine_to_wheel = 3 and motor_to_wheel = 6
DRIVE = DrivetrainParams(ratio_gear3=1.0, ratio_motor=2.0, ratio_final=3.0, ratio_gen=0.5, gear_eff=0.95)
BATT = BatteryParams(capacity=81720.0, voc_coeffs=(0.0, 60.0, 330.0), res_coeffs=(0.0, 0.0, 0.1),
                     soc_min=0.3, soc_max=0.9)


def poly6(c, x, y):
    # independent evaluation of the (1, x, y, x^2, xy, y^2) quadratic
    terms = [1.0, x, y, x**2, x * y, y**2]
    return sum(ci * ti for ci, ti in zip(c, terms))


# -- wheel ------------------------------------------------------------------


def test_wheel_torque_standstill_has_no_rolling_term():
    assert pt.wheel_torque(0.0, 0.0, VEH) == 0.0


def test_wheel_torque_cruise():
    assert pt.wheel_torque(0.0, 10.0, VEH) == pytest.approx(171.09, abs=5e-3)


def test_wheel_torque_adds_inertia():
    assert pt.wheel_torque(1.0, 10.0, VEH) == pytest.approx(643.59, abs=5e-3)
    assert pt.wheel_torque(1.0, 10.0, VEH) - pt.wheel_torque(0.0, 10.0, VEH) == pytest.approx(472.5)


@pytest.mark.parametrize("v, w", [(0.0, 0.0), (31.5, 100.0), (3.15, 10.0)])
def test_wheel_speed(v, w):
    assert pt.wheel_speed(v, VEH) == pytest.approx(w)


# -- engine -----------------------------------------------------------------


def test_engine_speed_constraint():
    closed = pt.PowertrainCommand(100.0, 150.0, 0.0, 1, 1)
    assert pt.engine_speed_constraint(50.0, closed, DRIVE) == pytest.approx(0.0)
    assert pt.engine_speed_constraint(50.0, replace(closed, engine_speed=100.0), DRIVE) == pytest.approx(-50.0)
    assert pt.engine_speed_constraint(50.0, replace(closed, clutch=0, engine_speed=321.0), DRIVE) == 0.0


def test_fuel_rate_examples():
    flat = EngineMap(be_coeffs=(230.0, 0, 0, 0, 0, 0), w_min=100, w_max=400, T_min=50, T_max=150)
    assert pt.fuel_rate(0.0, 0.0, flat) == 0.0
    assert pt.fuel_rate(300.0, 100.0, flat) == pytest.approx(230.0 * 30.0 / 3600.0)
    assert pt.fuel_rate(300.0, 100.0, flat) == pytest.approx(1.9167, abs=1e-4)
    assert pt.fuel_rate(300.0, 0.0, flat) == 0.0


def test_fuel_rate_rejects_stalled_engine():
    with pytest.raises(ValueError):
        pt.fuel_rate(0.0, 80.0, P.engine)


@settings(max_examples=200, deadline=None)
@given(st.floats(P.engine.w_min, P.engine.w_max), st.just(0.0) | st.floats(P.engine.T_min, P.engine.T_max))
def test_fuel_rate_nonnegative_and_zero_iff_no_torque(w, T):
    f = pt.fuel_rate(w, T, P.engine)
    assert f >= 0.0
    assert (f == 0.0) == (T == 0.0)


def test_command_semantics():
    eng = P.engine
    pt.PowertrainCommand(0.0, 0.0, 10.0, 0, 0).check(eng)
    pt.PowertrainCommand(80.0, 200.0, 10.0, 1, 1).check(eng)
    with pytest.raises(ValueError):
        pt.PowertrainCommand(0.0, 0.0, 10.0, 1, 0).check(eng)
    with pytest.raises(ValueError):
        pt.PowertrainCommand(20.0, 0.0, 10.0, 0, 0).check(eng)
    with pytest.raises(ValueError):
        pt.PowertrainCommand(80.0, eng.w_max + 10, 10.0, 0, 1).check(eng)


# -- motor ------------------------------------------------------------------


@pytest.mark.parametrize("w, out", [(0.0, 0.0), (50.0, 300.0), (10.0, 60.0)])
def test_motor_speed(w, out):
    assert pt.motor_speed(w, DRIVE) == pytest.approx(out)


def test_motor_torque_examples():
    assert pt.motor_torque(171.0, 0.0, 1, DRIVE) == pytest.approx(30.0)
    assert pt.motor_torque(171.0, 30.0, 1, DRIVE) == pytest.approx(15.0)
    assert pt.motor_torque(171.0, 30.0, 0, DRIVE) == pytest.approx(30.0)


def test_motor_efficiency_segments():
    m = P.motor
    below = pt.motor_efficiency(m.w_m1 - 1e-6, 50.0, m)
    at = pt.motor_efficiency(m.w_m1, 50.0, m)
    assert below == pytest.approx(poly6(m.f1, m.w_m1 - 1e-6, 50.0), rel=1e-12)
    assert at == pytest.approx(poly6(m.f2, m.w_m1, 50.0), rel=1e-12)
    assert pt.motor_efficiency(m.w_m2, 50.0, m) == pytest.approx(poly6(m.f2, m.w_m2, 50.0), rel=1e-12)
    assert pt.motor_efficiency(m.w_m2 + 1e-6, 50.0, m) == pytest.approx(poly6(m.f3, m.w_m2 + 1e-6, 50.0), rel=1e-12)


def test_motor_efficiency_midbox_matches_polynomial():
    m = P.motor
    w = 0.5 * (m.w_m1 + m.w_m2)
    assert pt.motor_efficiency(w, -120.0, m) == pytest.approx(poly6(m.f2, w, 120.0), rel=1e-12)


def test_motor_efficiency_out_of_box():
    with pytest.raises(ValueError):
        pt.motor_efficiency(P.motor.w_max + 1.0, 10.0, P.motor)
    with pytest.raises(ValueError):
        pt.motor_efficiency(100.0, P.motor.T_max + 1.0, P.motor)


@settings(max_examples=200, deadline=None)
@given(st.floats(P.motor.w_min, P.motor.w_max), st.floats(0.0, P.motor.T_max))
def test_motor_efficiency_even_and_in_unit_interval(w, T):
    e = pt.motor_efficiency(w, T, P.motor)
    assert e == pt.motor_efficiency(w, -T, P.motor)
    assert 0.0 < e < 1.0


# -- generator --------------------------------------------------------------


@pytest.mark.parametrize("w, out", [(0.0, 0.0), (300.0, 600.0), (150.0, 300.0)])
def test_generator_speed(w, out):
    assert pt.generator_speed(w, DRIVE) == pytest.approx(out)


def test_generator_torque_examples():
    assert pt.generator_torque(100.0, 50.0, 0, DRIVE) == pytest.approx(47.5)
    assert pt.generator_torque(100.0, 50.0, 1, DRIVE) == pytest.approx((100.0 - 50.0 / 0.95) * 0.475)
    assert pt.generator_torque(100.0, 50.0, 1, DRIVE) == pytest.approx(22.50, abs=5e-3)
    assert pt.generator_torque(0.0, 0.0, 1, DRIVE) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 150.0), st.floats(0.0, 150.0))
def test_series_mode_sends_all_engine_torque_to_generator(T_e, T_3):
    d = P.drivetrain
    assert pt.generator_torque(T_e, T_3, 0, d) == T_e * d.ratio_gen * d.gear_eff


@pytest.mark.parametrize("w, T", [(300.0, 20.0), (600.0, 45.0), (800.0, 65.0)])
def test_generator_efficiency_matches_polynomial(w, T):
    g = P.generator
    assert pt.generator_efficiency(w, T, g) == pytest.approx(poly6(g.coeffs, w, T), rel=1e-12)
    assert pt.generator_efficiency(w, -T, g) == pt.generator_efficiency(w, T, g)


def test_generator_efficiency_box_corners():
    g = P.generator
    for w in (g.w_min, g.w_max):
        for T in (g.T_min, g.T_max):
            e = pt.generator_efficiency(w, T, g)
            assert 0.0 < e < 1.0
            assert e == pytest.approx(poly6(g.coeffs, w, T), rel=1e-12)
    with pytest.raises(ValueError):
        pt.generator_efficiency(g.w_max + 1.0, 10.0, g)


# -- battery ----------------------------------------------------------------


def test_battery_power_examples():
    assert pt.battery_power(30.0, 300.0, 0.9, 0.0, 0.0, 0.9) == pytest.approx(10000.0)
    assert pt.battery_power(-30.0, 300.0, 0.9, 0.0, 0.0, 0.9) == pytest.approx(-8100.0)
    assert pt.battery_power(0.0, 300.0, 0.9, 20.0, 600.0, 0.9) == pytest.approx(-10800.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 250.0), st.floats(1.0, 1300.0), st.floats(0.5, 0.99))
def test_battery_power_sign(T, w, eta):
    assert pt.battery_power(T, w, eta, 0.0, 0.0, 0.9) > 0
    assert pt.battery_power(-T, w, eta, 0.0, 0.0, 0.9) < 0


@pytest.mark.parametrize("soc, voc", [(0.0, 330.0), (0.6, 366.0), (1.0, 390.0)])
def test_battery_electrical(soc, voc):
    v, r = pt.battery_electrical(soc, BATT)
    assert v == pytest.approx(voc)
    assert r == pytest.approx(0.1)


def test_battery_electrical_rejects_bad_soc():
    with pytest.raises(ValueError):
        pt.battery_electrical(1.2, BATT)


def test_soc_derivative_examples():
    assert pt.soc_derivative(0.0, 0.6, BATT) == 0.0
    d = pt.soc_derivative(10000.0, 0.6, BATT)
    assert d == pytest.approx(-3.369e-4, rel=1e-3)
    # independent route: the current solves V I - R I^2 = P
    i = -d * BATT.capacity
    assert 366.0 * i - 0.1 * i * i == pytest.approx(10000.0, rel=1e-12)
    assert pt.soc_derivative(-5000.0, 0.6, BATT) > 0


def test_soc_derivative_infeasible_power():
    v, r = pt.battery_electrical(0.6, BATT)
    with pytest.raises(pt.InfeasiblePowerError):
        pt.soc_derivative(v * v / (4 * r) * 1.001, 0.6, BATT)


def test_step_soc_examples():
    assert pt.step_soc(0.6, 0.0, 0.1, BATT) == 0.6
    assert pt.step_soc(0.6, 10000.0, 0.1, BATT) == pytest.approx(0.59996631, abs=1e-8)
    up = pt.step_soc(0.6, -10000.0, 0.1, BATT)
    i = (up - 0.6) / 0.1 * BATT.capacity  # charging current, negative discharge
    assert up > 0.6
    assert 366.0 * (-i) - 0.1 * i * i == pytest.approx(-10000.0, rel=1e-9)


def test_step_soc_reports_bound_breach():
    b = replace(BATT, soc_min=0.59999)
    assert pt.step_soc(0.6, 20000.0, 0.1, b) < b.soc_min  # never clamped
    with pytest.raises(pt.SocBoundsError):
        pt.step_soc(0.6, 20000.0, 0.1, b, check_bounds=True)


@settings(max_examples=200, deadline=None)
@given(st.floats(P.battery.soc_min, P.battery.soc_max), st.floats(0.0, 1.0))
def test_soc_derivative_decreasing_in_power(soc, frac):
    pmax = pt.max_battery_power(soc, P.battery)
    p1 = -pmax + frac * 1.9 * pmax
    p2 = p1 + 0.05 * pmax
    assert pt.soc_derivative(p2, soc, P.battery) < pt.soc_derivative(p1, soc, P.battery)
