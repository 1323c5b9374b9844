"""Plant equations of the series-parallel PHEV (one clutch, engine, motor, generator, battery).

All functions are pure.  Most accept numpy arrays as well as floats; the map
lookups that validate their inputs against the admissible box only take
scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import (
    BatteryParams,
    DrivetrainParams,
    EngineMap,
    GeneratorMap,
    MotorMap,
    VehicleParams,
    quad2,
)

# W * (g/kWh) -> g/s
_G_PER_KWH_TO_G_PER_WS = 1.0 / 3.6e6
_BOX_EPS = 1e-9


class InfeasiblePowerError(ValueError):
    """Battery power above V_oc^2 / (4 R_b): no real current solves the cell equation."""


class SocBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class PowertrainCommand:
    engine_torque: float
    engine_speed: float
    motor_torque: float
    clutch: int
    engine_on: int
    gear3_torque: float = 0.0

    def check(self, engine: EngineMap, tol: float = 1e-6) -> None:
        """Raise ValueError if the engine/clutch semantics are violated."""
        if self.clutch not in (0, 1) or self.engine_on not in (0, 1):
            raise ValueError("clutch and engine_on must be 0 or 1")
        if self.clutch > self.engine_on:
            raise ValueError("clutch engaged with engine off")
        if not self.engine_on:
            if abs(self.engine_torque) > tol or abs(self.engine_speed) > tol:
                raise ValueError("engine off requires zero torque and speed")
            return
        if not engine.w_min - tol <= self.engine_speed <= engine.w_max + tol:
            raise ValueError(f"engine speed {self.engine_speed} outside [{engine.w_min}, {engine.w_max}]")
        if not engine.T_min - tol <= self.engine_torque <= engine.T_max + tol:
            raise ValueError(f"engine torque {self.engine_torque} outside [{engine.T_min}, {engine.T_max}]")


def wheel_torque(a_h, v_h, p: VehicleParams):
    """Wheel torque demand [N m]; rolling resistance vanishes at standstill."""
    a_h = np.asarray(a_h, dtype=float)
    v_h = np.asarray(v_h, dtype=float)
    aero = 0.5 * p.drag_coeff * p.air_density * p.cross_section * v_h * v_h
    rolling = np.where(v_h > 0.0, p.rolling_coeff * p.mass * p.gravity * np.cos(p.road_grade), 0.0)
    grade = p.mass * p.gravity * np.sin(p.road_grade)
    out = (p.mass * a_h + aero + rolling + grade) * p.wheel_radius
    return out[()] if out.ndim == 0 else out


def wheel_speed(v_h, p: VehicleParams):
    return np.asarray(v_h, dtype=float)[()] / p.wheel_radius


def engine_speed_constraint(w_wheel: float, cmd: PowertrainCommand, d: DrivetrainParams) -> float:
    """Residual of the clutch speed coupling; zero at feasibility, identically zero with the clutch open."""
    if not cmd.clutch:
        return 0.0
    return cmd.engine_speed - w_wheel * d.engine_to_wheel


def fuel_rate(w_e, T_e, m: EngineMap):
    """Fuel mass flow [g/s] from the specific-consumption map [g/kWh]."""
    w_e = np.asarray(w_e, dtype=float)
    T_e = np.asarray(T_e, dtype=float)
    if np.any((T_e > 0) & (w_e <= 0)):
        raise ValueError("positive engine torque at zero engine speed")
    out = np.where(T_e > 0, quad2(m.be_coeffs, w_e, T_e) * w_e * T_e * _G_PER_KWH_TO_G_PER_WS, 0.0)
    return out[()] if out.ndim == 0 else out


def motor_speed(w_wheel, d: DrivetrainParams):
    return np.asarray(w_wheel, dtype=float)[()] * d.motor_to_wheel


def motor_torque(T_w, T_3, i_c, d: DrivetrainParams):
    """Motor torque closing the wheel torque balance; gear 3 only carries torque with the clutch closed."""
    return (T_w - T_3 * d.engine_to_wheel * d.gear_eff * i_c) / (d.motor_to_wheel * d.gear_eff)


def _check_box(name: str, w: float, t_abs: float, w_lo: float, w_hi: float, t_lo: float, t_hi: float) -> None:
    if not (w_lo - _BOX_EPS <= w <= w_hi + _BOX_EPS and t_lo - _BOX_EPS <= t_abs <= t_hi + _BOX_EPS):
        raise ValueError(f"{name} operating point (w={w:g}, |T|={t_abs:g}) outside map box")


def motor_efficiency(w_m: float, T_m: float, m: MotorMap) -> float:
    t_abs = abs(T_m)
    _check_box("motor", w_m, t_abs, m.w_min, m.w_max, 0.0, max(-m.T_min, m.T_max))
    coeffs = m.coeff_table[int(m.segment(w_m))]
    return float(quad2(coeffs, w_m, t_abs))


def generator_speed(w_e, d: DrivetrainParams):
    return np.asarray(w_e, dtype=float)[()] / d.ratio_gen


def generator_torque(T_e, T_3, i_c, d: DrivetrainParams):
    return (T_e - T_3 * i_c / d.gear_eff) * d.ratio_gen * d.gear_eff


def generator_efficiency(w_g: float, T_g: float, m: GeneratorMap) -> float:
    t_abs = abs(T_g)
    _check_box("generator", w_g, t_abs, m.w_min, m.w_max, m.T_min, m.T_max)
    return float(quad2(m.coeffs, w_g, t_abs))


def battery_power(T_m, w_m, eta_m, T_g, w_g, eta_g):
    """Electrical power drawn from the battery [W]; positive means discharge.

    Motoring divides by the motor efficiency, regeneration multiplies; the
    exponent at T_m == 0 is taken as -1.
    """
    T_m = np.asarray(T_m, dtype=float)
    motor = np.where(T_m < 0, T_m * w_m * eta_m, T_m * w_m / eta_m)
    out = motor - T_g * w_g * eta_g
    return out[()] if out.ndim == 0 else out


def battery_electrical(soc, b: BatteryParams):
    """Open-circuit voltage [V] and internal resistance [ohm] at a state of charge."""
    soc_arr = np.asarray(soc, dtype=float)
    if np.any((soc_arr < 0) | (soc_arr > 1)):
        raise ValueError(f"SOC {soc} outside [0, 1]")
    b1, b2, b3 = b.voc_coeffs
    c1, c2, c3 = b.res_coeffs
    return b1 * soc * soc + b2 * soc + b3, c1 * soc * soc + c2 * soc + c3


def max_battery_power(soc, b: BatteryParams):
    v_oc, r_b = battery_electrical(soc, b)
    return v_oc * v_oc / (4.0 * r_b)


def soc_derivative(p_b, soc, b: BatteryParams):
    """d(SOC)/dt [1/s] from the internal-resistance cell model."""
    v_oc, r_b = battery_electrical(soc, b)
    disc = v_oc * v_oc - 4.0 * r_b * np.asarray(p_b, dtype=float)
    if np.any(disc < 0):
        raise InfeasiblePowerError(f"battery power {p_b} W exceeds V_oc^2/(4 R_b)")
    out = -(v_oc - np.sqrt(disc)) / (2.0 * r_b * b.capacity)
    return out[()] if np.ndim(out) == 0 else out


def battery_current(p_b, soc, b: BatteryParams):
    """Terminal current [A] implied by ``soc_derivative`` (positive = discharge)."""
    return -b.capacity * soc_derivative(p_b, soc, b)


def step_soc(soc: float, p_b: float, dt: float, b: BatteryParams, *, check_bounds: bool = False) -> float:
    """One explicit-Euler step of SOC.  The result is never clamped.

    With ``check_bounds`` a result outside [soc_min, soc_max] raises
    :class:`SocBoundsError` instead of being returned.
    """
    out = float(soc + dt * soc_derivative(p_b, soc, b))
    if check_bounds and not b.soc_min <= out <= b.soc_max:
        raise SocBoundsError(f"SOC {out:.6f} left [{b.soc_min}, {b.soc_max}]")
    return out
