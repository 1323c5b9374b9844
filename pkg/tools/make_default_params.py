"""Regenerate src/phevmpc/data/default_params.ini.

The component maps are synthetic: smooth "truth" surfaces sampled on a
grid and fitted with the same least-squares routines the CLI exposes.
The engine and generator truths are themselves quadratics, so those fits
are exact; the motor truth is not, which is why it is split in three.
"""

from pathlib import Path

import numpy as np

from phevmpc import maps
from phevmpc.params import format_section, parse_params

OUT = Path(__file__).resolve().parents[1] / "src" / "phevmpc" / "data" / "default_params.ini"

# engine: BSFC bowl, 205 g/kWh at 2200 rpm / 115 N m
W0, T0 = 230.0, 115.0
ENGINE = dict(w_min=125.0, w_max=420.0, T_min=57.0, T_max=135.0)
MOTOR = dict(w_min=0.0, w_max=1300.0, T_min=-250.0, T_max=250.0)
W_M1, W_M2 = 150.0, 700.0
GEN = dict(w_min=240.0, w_max=850.0, T_min=0.0, T_max=70.0)


def engine_truth(w, t):
    return 205.0 + 1.0e-3 * (w - W0) ** 2 + 8.0e-3 * (t - T0) ** 2


def motor_truth(w, t):
    t = np.abs(t)
    return (0.955 - 0.20 * np.exp(-w / 120.0) - 0.05 * (t / 250.0) ** 2
            - 0.03 * (w / 1300.0) ** 2 - 0.04 * np.exp(-t / 40.0))


def generator_truth(w, t):
    return 0.94 - 0.03 * ((w - 550.0) / 300.0) ** 2 - 0.08 * ((t - 45.0) / 45.0) ** 2


def grid(f, xs, ys):
    X, Y = np.meshgrid(xs, ys)
    return maps.GridSamples(X.ravel(), Y.ravel(), f(X, Y).ravel())


def main():
    eng = maps.fit_quadratic_surface(
        grid(engine_truth, np.linspace(ENGINE["w_min"], ENGINE["w_max"], 12), np.linspace(ENGINE["T_min"], ENGINE["T_max"], 9)))
    mot = maps.fit_piecewise_motor(
        grid(motor_truth, np.linspace(0.0, MOTOR["w_max"], 53), np.linspace(-250.0, 250.0, 41)), W_M1, W_M2)
    gen = maps.fit_quadratic_surface(
        grid(generator_truth, np.linspace(GEN["w_min"], GEN["w_max"], 12), np.linspace(GEN["T_min"], GEN["T_max"], 8)))
    print("engine", eng.summary())
    print("motor\n" + mot.summary())
    print("generator", gen.summary())
    rnd = lambda c: tuple(float(f"{x:.10g}") for x in c)
    f1, f2, f3 = (rnd(c) for c in mot.coeffs)
    header = """\
# Default parameters for the co-optimization simulator.
#
# [vehicle] is the published vehicle table.  drag_coeff keeps the printed
# value 2.8; a conventional sedan value is 0.28 (override with
# --set vehicle.drag_coeff=0.28).  Every other section is a synthetic but
# physically plausible stand-in: the manufacturer maps, gear ratios, limits
# and cost weights were never published.  Regenerate the map coefficients
# with tools/make_default_params.py.
#
# Units: rad/s, N m, W, V, ohm, coulomb, g/kWh, m, m/s, m/s^2, m/s^3.
# Quadratic maps use the basis (1, x, y, x^2, xy, y^2).

"""
    body = [
        format_section("vehicle", dict(mass=1500.0, cross_section=2.36, wheel_radius=0.315, rolling_coeff=0.01,
                                       air_density=1.1985, drag_coeff=2.8, gravity=9.81, road_grade=0.0)),
        "# engine_to_wheel (i_3 * i_d) = 2.3: the clutch can close above ~17 m/s\n"
        + format_section("drivetrain", dict(ratio_gear3=2.3 / 3.0, ratio_motor=3.0, ratio_final=3.0,
                                            ratio_gen=0.5, gear_eff=0.95)),
        "# b_e [g/kWh] over (w_e, T_e); the box is the high-efficiency operating window\n"
        + format_section("engine", dict(be_coeffs=rnd(eng.coeffs), **ENGINE)),
        "# eta_m over (w_m, |T_m|); f1 below w_m1, f2 on [w_m1, w_m2], f3 above w_m2\n"
        + format_section("motor", dict(f1=f1, f2=f2, f3=f3, w_m1=W_M1, w_m2=W_M2, **MOTOR)),
        "# eta_g over (w_g, |T_g|); T_min = 0 keeps the generator in generating mode\n"
        + format_section("generator", dict(coeffs=rnd(gen.coeffs), **GEN)),
        "# 22.7 Ah pack; V_oc = b1 SOC^2 + b2 SOC + b3, R_b = c1 SOC^2 + c2 SOC + c3\n"
        + format_section("battery", dict(capacity=81720.0, voc_coeffs=(-40.0, 100.0, 320.0),
                                         res_coeffs=(0.1, -0.1, 0.12), soc_min=0.3, soc_max=0.9)),
        "# normalizers of the car-following cost and the comfort/safety bounds\n"
        + format_section("acc", dict(e_nmax=1.0, v_r_nmax=1.0, j_nmax=2.0, a_min=-3.0, a_max=2.0,
                                     v_min=0.0, v_max=40.0)),
        "# lam weights the normalized SOC deviation against fuel [g]\n"
        + format_section("ems", dict(lam=5.0e4, soc_ref=0.6)),
    ]
    text = header + "\n".join(body)
    parse_params(text)
    OUT.write_text(text)
    print("wrote", OUT)


if __name__ == "__main__":
    main()
