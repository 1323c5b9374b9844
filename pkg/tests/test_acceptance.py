"""Acceptance suite: one recorded pass/fail line per criterion.

The closed-loop runs are expensive (tens of minutes on one core) and are
shared through session fixtures.
"""

import math

import numpy as np
import pytest

from phevmpc import acc, minlp, ocp, powertrain as pt, sim
from phevmpc.minlp import SolveOptions
from phevmpc.sim import SimConfig

from helpers import fd_worst_error, interior_point, random_variant

pytestmark = pytest.mark.slow

WLTC_LOW = (0.0, 300.0)
PAIRED = (20.0, 70.0)


@pytest.fixture(scope="session")
def wltc(params):
    return sim.load_cycle(sim.default_cycle_path())


@pytest.fixture(scope="session")
def wltc_runs(params, wltc):
    return {m: sim.run(SimConfig(mode=m, segment=WLTC_LOW), params, wltc) for m in sim.MODES}


@pytest.fixture(scope="session")
def paired_run(params, wltc):
    return sim.run(SimConfig(mode="sequential", segment=PAIRED, paired=True), params, wltc)


def test_c1_dominance(paired_run, criterion):
    recs = paired_run.records
    slack = np.array([r.coop_objective - r.composite_objective for r in recs])
    ok = len(recs) >= 500 and bool(np.all(slack <= 1e-6))
    criterion(1, ok, f"{int(np.sum(slack <= 1e-6))}/{len(recs)} paired states with J_co <= J_seq + 1e-6 "
                     f"(max slack {slack.max():+.2e})")
    assert ok


def test_c2_oracle(params, criterion):
    rng = np.random.default_rng(2024)
    worst, bad, n = 0.0, 0, 0
    for variant in ("ems", "coop"):
        for i in range(50):
            p = ocp.random_problem(rng, variant, params, 1 + i % 4)
            b, e = minlp.solve_bnb(p), minlp.solve_exhaustive(p)
            if math.isfinite(e.objective):
                d = abs(b.objective - e.objective)
            else:
                d = 0.0 if not math.isfinite(b.objective) else math.inf
            worst = max(worst, d)
            bad += d > 1e-6
            n += 1
    criterion(2, bad == 0, f"{n - bad}/{n} instances match enumeration (worst {worst:.2e})")
    assert bad == 0


def test_c3_fuel(wltc_runs, criterion):
    m = {k: r.metrics() for k, r in wltc_runs.items()}
    seq, co = m["sequential"]["fuel_kg"], m["coop"]["fuel_kg"]
    saving = 100.0 * (seq - co) / seq if seq > 0 else 0.0
    ok = co <= seq
    criterion(3, ok, f"fuel sequential {seq:.6f} kg, coop {co:.6f} kg, saving {saving:+.2f}%")
    assert ok


def test_c4_charge_sustaining(wltc_runs, criterion):
    socs = {k: r.final_soc for k, r in wltc_runs.items()}
    ok = all(abs(s - 0.6) <= 0.02 for s in socs.values())
    criterion(4, ok, ", ".join(f"final SOC {k} {v:.4f}" for k, v in socs.items()))
    assert ok


def test_c5_battery_identity(params, criterion):
    rng = np.random.default_rng(5)
    b = params.powertrain.battery
    worst, n = 0.0, 0
    while n < 1000:
        soc = rng.uniform(b.soc_min, b.soc_max)
        p_b = rng.uniform(-1.0, 1.0) * pt.max_battery_power(soc, b)
        v, r = pt.battery_electrical(soc, b)
        i = pt.battery_current(p_b, soc, b)
        worst = max(worst, abs(v * i - r * i * i - p_b) / max(1.0, abs(p_b)))
        n += 1
    ok = worst <= 1e-6
    criterion(5, ok, f"max scaled residual {worst:.2e} over {n} points")
    assert ok


def test_c6_gradients(params, criterion):
    rng = np.random.default_rng(6)
    worst = {}
    for variant in ("acc", "ems", "coop"):
        w = 0.0
        for _ in range(100):
            p = random_variant(rng, variant, params)
            w = max(w, fd_worst_error(p, interior_point(rng, p)))
        worst[variant] = w
    ok = all(v <= 1e-5 for v in worst.values())
    criterion(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def structural_violations(r, params):
    d = params.powertrain.drivetrain
    bad = []
    for x in r.records:
        if (x.fuel_increment == 0.0) != (x.engine_on == 0):
            bad.append((x.time, "fuel/engine"))
        if x.i_c == 0 and abs(x.T_g - x.T_e * d.ratio_gen * d.gear_eff) > 1e-8:
            bad.append((x.time, "series torque"))
        lo, hi = acc.spacing_band(x.v_h)
        if lo <= x.s <= hi and x.e != 0.0:
            bad.append((x.time, "band error"))
    return bad


def test_c7_structure(wltc_runs, paired_run, params, criterion):
    runs = {**wltc_runs, "paired": paired_run}
    counts = {k: len(structural_violations(r, params)) for k, r in runs.items()}
    steps = sum(len(r.records) for r in runs.values())
    ok = not any(counts.values())
    criterion(7, ok, f"{steps} steps checked, violations {counts}")
    assert ok


def test_c8_determinism(params, wltc, criterion):
    seg = (20.0, 30.0)
    out = {}
    for mode in sim.MODES:
        texts = [sim.records_csv(sim.run(SimConfig(mode=mode, segment=seg, solver=SolveOptions(workers=w)), params, wltc))
                 for w in (1, 1, 4)]
        out[mode] = len(set(texts)) == 1
    ok = all(out.values())
    criterion(8, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in out.items()))
    assert ok


def test_c9_solver_cost(wltc_runs, criterion):
    t = {k: r.metrics()["mean_solve_time_s"] for k, r in wltc_runs.items()}
    ratio = t["coop"] / t["sequential"]
    ok = t["coop"] > t["sequential"]
    criterion(9, ok, f"mean solve time sequential {t['sequential']:.4f} s, coop {t['coop']:.4f} s, ratio {ratio:.1f}")
    assert ok
