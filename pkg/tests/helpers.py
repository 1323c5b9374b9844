"""Shared oracles for the test suite."""

import numpy as np

from phevmpc import acc, ocp, powertrain as pt
from phevmpc.params import quad2


def random_state(rng, v_lo=2.0, v_hi=25.0):
    v0 = rng.uniform(v_lo, v_hi)
    x = acc.AccState(acc.band_midpoint(v0) + rng.normal(0, 3), rng.normal(0, 1), v0, rng.normal(0, 0.5))
    vp = x.v_p + np.cumsum(rng.normal(0, 0.1, 9))
    return x, ocp.preview_from_speeds(vp, 0.1)


def random_variant(rng, variant, params, N=8, soc=0.6):
    x, (a_p, v_p) = random_state(rng)
    h = ocp.Horizon(N, 0.1)
    if variant == "acc":
        return ocp.build_acc_problem(x, a_p[:N], v_p[:N], params, h)
    if variant == "ems":
        return ocp.build_ems_problem(x, soc, rng.uniform(-1, 1, N), a_p[:N], v_p[:N], params, h)
    return ocp.build_coop_problem(x, soc, a_p[:N], v_p[:N], params, h)


def interior_point(rng, p):
    """Random point strictly inside the box, away from the |T_m| = 0 kink."""
    hi = np.where(np.isfinite(p.ub), p.ub, p.lb + 1.0)
    z = p.lb + rng.uniform(0.05, 0.95, p.n) * (hi - p.lb)
    if p.variant != "acc":
        N = p.horizon.steps
        z[p.block("Tm")] = rng.uniform(20, 200, N) * rng.choice([-1, 1], N)
    return z


def fd_worst_error(p, z):
    """Largest relative gap between analytic and central-difference derivatives."""
    d = p.gradient(z)
    worst = 0.0
    for k in range(p.n):
        h = 1e-6 * max(1.0, abs(z[k]))
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        ep, em = p.evaluate(zp), p.evaluate(zm)
        pairs = [
            (np.array([(ep.objective - em.objective) / (2 * h)]), np.array([d.objective[k]])),
            ((ep.eq - em.eq) / (2 * h), d.eq[:, k]),
            ((ep.ineq - em.ineq) / (2 * h), d.ineq[:, k]),
        ]
        for fd, an in pairs:
            if fd.size:
                worst = max(worst, float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(fd)))))
    return worst


def poly6(c, x, y):
    return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y


def hand_ems_objective(p, z):
    """EMS part of the objective re-derived step by step from the plant functions."""
    prm = p.params
    veh, dtr, bat, ems = prm.vehicle, prm.drivetrain, prm.battery, prm.ems
    N, dt = p.horizon.steps, p.horizon.dt
    X = p.split(z)
    a = p.accelerations(z)
    x = p.state
    soc, total = p.soc0, 0.0
    for k in range(N):
        v = x.v_h
        T_w = pt.wheel_torque(a[k], v, veh)
        w_m = pt.motor_speed(pt.wheel_speed(v, veh), dtr)
        eta_m = poly6(prm.motor.coeff_table[int(prm.motor.segment(w_m))], w_m, abs(X["Tm"][k]))
        T_g = pt.generator_torque(X["Te"][k], X["T3"][k], 1, dtr)
        w_g = pt.generator_speed(X["we"][k], dtr)
        eta_g = poly6(prm.generator.coeffs, w_g, abs(T_g))
        P_b = pt.battery_power(X["Tm"][k], w_m, eta_m, T_g, w_g, eta_g)
        soc = pt.step_soc(soc, P_b, dt, bat)
        fuel = pt.fuel_rate(X["we"][k], X["Te"][k], prm.engine) if X["Te"][k] > 0 else 0.0
        total += dt * (fuel + ems.lam * ((soc - ems.soc_ref) / (bat.soc_max - bat.soc_min)) ** 2)
        x = acc.AccState(x.s + dt * x.v_r, x.v_r + dt * (p.a_p[k] - a[k]), x.v_h + dt * a[k], a[k])
    return total


def hand_acc_objective(p, z):
    w = p.params.acc
    N, dt = p.horizon.steps, p.horizon.dt
    a = p.accelerations(z)
    x = p.state
    total, a_prev = 0.0, x.a_prev
    for k in range(N):
        x = acc.AccState(x.s + dt * x.v_r, x.v_r + dt * (p.a_p[k] - a[k]), x.v_h + dt * a[k], a[k])
        e = acc.distance_error(x.s, x.v_h)
        total += dt * acc.acc_stage_cost(e, x.v_r, a[k], (a[k] - a_prev) / dt, w)
        a_prev = a[k]
    return total
