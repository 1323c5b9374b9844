"""Receding-horizon closed loop over a drive cycle.

The preceding vehicle replays the cycle; the host runs either the
sequential controller (ACC first, EMS at the ACC acceleration plan) or the
co-optimization controller, applies the first move, and the plant is
advanced with the same Euler models the controllers use.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import acc as acc_mod
from . import ocp, powertrain
from .acc import AccState
from .minlp import Solution, SolveOptions, solve_bnb, solve_nlp
from .params import Params, load_params

log = logging.getLogger(__name__)

MODES = ("sequential", "coop")


class CycleError(ValueError):
    pass


class SimulationError(RuntimeError):
    """A controller found no feasible move; ``dump`` holds the state at that step."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass(frozen=True)
class DriveCycle:
    time: np.ndarray
    speed: np.ndarray
    dt: float

    @property
    def accel(self) -> np.ndarray:
        """Forward-difference acceleration; the last sample holds at zero."""
        return np.append(np.diff(self.speed) / self.dt, 0.0)

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0])

    def distance(self) -> float:
        return float(trapezoid(self.speed, self.time))

    def segment(self, t0: float, t1: float) -> "DriveCycle":
        if not (self.time[0] - 1e-9 <= t0 < t1 <= self.time[-1] + 1e-9):
            raise CycleError(f"segment [{t0}, {t1}] outside cycle [{self.time[0]}, {self.time[-1]}]")
        mask = (self.time >= t0 - 1e-9) & (self.time <= t1 + 1e-9)
        return DriveCycle(self.time[mask] - self.time[mask][0], self.speed[mask], self.dt)

    def preview(self, i: int, steps: int) -> np.ndarray:
        """Speeds at samples i..i+steps, holding the final speed past the end."""
        idx = np.minimum(np.arange(i, i + steps + 1), len(self.speed) - 1)
        return self.speed[idx]


def parse_cycle(text: str, dt: float, source: str = "<cycle>") -> DriveCycle:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise CycleError(f"{source}: empty file")
    if [h.strip() for h in header] != ["time_s", "speed_mps"]:
        raise CycleError(f"{source}: header must be time_s,speed_mps")
    t, v = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise CycleError(f"{source}: row {lineno}: expected 2 columns")
        try:
            ti, vi = float(row[0]), float(row[1])
        except ValueError:
            raise CycleError(f"{source}: row {lineno}: non-numeric value") from None
        if not (math.isfinite(ti) and math.isfinite(vi)):
            raise CycleError(f"{source}: row {lineno}: non-finite value")
        if vi < 0:
            raise CycleError(f"{source}: row {lineno}: negative speed")
        if t and ti <= t[-1]:
            raise CycleError(f"{source}: row {lineno}: time not strictly increasing")
        t.append(ti)
        v.append(vi)
    if len(t) < 2:
        raise CycleError(f"{source}: need at least two samples")
    t = np.array(t)
    v = np.array(v)
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n)
    return DriveCycle(grid - t[0], np.interp(grid, t, v), dt)


def load_cycle(path: str | Path, dt: float = 0.1) -> DriveCycle:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CycleError(f"{path}: {exc.strerror}") from None
    return parse_cycle(text, dt, str(path))


def default_cycle_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("phevmpc") / "data" / "wltc_class3b.csv"))


@dataclass(frozen=True)
class SimConfig:
    mode: str = "sequential"
    soc0: float = 0.6
    gap0: float | None = None  # default: band midpoint at the initial speed
    v0: float | None = None  # default: the cycle's initial speed
    horizon: ocp.Horizon = ocp.Horizon()
    solver: SolveOptions = SolveOptions()
    segment: tuple[float, float] | None = None
    fuel_density: float = 0.75  # kg/L
    paired: bool = False  # sequential only: also solve coop from each state (diagnostic)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.paired and self.mode != "sequential":
            raise ValueError("the paired diagnostic runs on the sequential loop")
        if self.fuel_density <= 0:
            raise ValueError("fuel_density must be > 0")


@dataclass(frozen=True)
class StepRecord:
    time: float
    s: float
    v_h: float
    v_p: float
    a_h: float
    j_h: float
    e: float
    soc: float
    T_e: float
    w_e: float
    T_m: float
    T_3: float
    T_g: float
    i_c: int
    engine_on: int
    P_b: float
    fuel_increment: float
    acc_cost: float
    ems_cost: float
    objective: float
    status: str
    nodes: int
    solve_time: float = field(default=0.0, compare=False)
    # paired diagnostic (sequential runs with paired=True)
    coop_objective: float = math.nan
    composite_objective: float = math.nan


RECORD_COLUMNS = tuple(f.name for f in fields(StepRecord) if f.name not in ("solve_time",))


@dataclass
class SimResult:
    config: SimConfig
    records: list[StepRecord]
    final_state: AccState | None = None
    final_soc: float = math.nan

    def metrics(self) -> dict[str, float]:
        return metrics(self)


def metrics(r: SimResult) -> dict[str, float]:
    recs = r.records
    dt = r.config.horizon.dt
    fuel_g = float(sum(x.fuel_increment for x in recs))
    dist_m = 0.0
    if recs:
        dist_m = float(sum(0.5 * (a.v_h + b.v_h) * dt for a, b in zip(recs, recs[1:])))
        dist_m += 0.5 * (recs[-1].v_h + (r.final_state.v_h if r.final_state else recs[-1].v_h)) * dt
    jerks = np.array([x.j_h for x in recs]) if recs else np.zeros(0)
    times = np.array([x.solve_time for x in recs]) if recs else np.zeros(0)
    per100 = 100_000.0 / dist_m if dist_m > 0 else 0.0
    final_soc = r.final_soc if recs else r.config.soc0
    return {
        "steps": float(len(recs)),
        "duration_s": len(recs) * dt,
        "distance_km": dist_m / 1000.0,
        "fuel_kg": fuel_g / 1000.0,
        "fuel_kg_per_100km": fuel_g / 1000.0 * per100,
        "fuel_l_per_100km": fuel_g / 1000.0 / r.config.fuel_density * per100,
        "final_soc": float(final_soc),
        "jerk_rms": float(np.sqrt(np.mean(jerks**2))) if recs else 0.0,
        "jerk_min": float(jerks.min()) if recs else 0.0,
        "jerk_max": float(jerks.max()) if recs else 0.0,
        "engine_on_fraction": float(np.mean([x.engine_on for x in recs])) if recs else 0.0,
        "mean_solve_time_s": float(times.mean()) if recs else 0.0,
        "max_solve_time_s": float(times.max()) if recs else 0.0,
    }


def compare_metrics(a: dict[str, float], b: dict[str, float], keys: Sequence[str] = ("fuel_kg", "final_soc", "mean_solve_time_s")):
    """Percentage change of ``b`` relative to ``a`` for each key."""
    out = {}
    for k in keys:
        base = a[k]
        out[k] = 0.0 if base == b[k] else (math.inf if base == 0 else 100.0 * (b[k] - base) / base)
    return out


def _shift(p: ocp.ProblemSpec, z: np.ndarray | None) -> np.ndarray | None:
    if z is None:
        return None
    X = np.asarray(z, dtype=float).reshape(len(p.rows), p.horizon.steps)
    return np.concatenate([X[:, 1:], X[:, -1:]], axis=1).ravel()


def _fit_warm(p: ocp.ProblemSpec, z: np.ndarray | None) -> np.ndarray | None:
    if z is None or z.size != p.n:
        return None
    return np.clip(z, p.lb, p.ub)


class Controller:
    """One MPC controller with its warm-start memory."""

    def __init__(self, params: Params, mode: str, horizon: ocp.Horizon, opts: SolveOptions):
        self.params = params
        self.mode = mode
        self.h = horizon
        self.opts = opts
        self._warm: dict[str, np.ndarray | None] = {"acc": None, "ems": None, "coop": None}

    def sequential(self, x: AccState, soc: float, a_p, v_p):
        acc_p = ocp.build_acc_problem(x, a_p, v_p, self.params, self.h)
        acc_s = solve_nlp(acc_p, self.opts, _fit_warm(acc_p, self._warm["acc"]))
        if acc_s.x is None:
            return acc_p, acc_s, None, None
        a_plan = acc_p.split(acc_s.x)["a"]
        ems_p = ocp.build_ems_problem(x, soc, a_plan, a_p, v_p, self.params, self.h)
        ems_s = solve_bnb(ems_p, self.opts, _fit_warm(ems_p, self._warm["ems"]))
        self._warm["acc"] = _shift(acc_p, acc_s.x)
        self._warm["ems"] = _shift(ems_p, ems_s.x) if ems_s.x is not None else None
        return acc_p, acc_s, ems_p, ems_s

    def coop(self, x: AccState, soc: float, a_p, v_p, warm: np.ndarray | None = None, remember: bool = True):
        p = ocp.build_coop_problem(x, soc, a_p, v_p, self.params, self.h)
        start = warm if warm is not None else _fit_warm(p, self._warm["coop"])
        s = solve_bnb(p, self.opts, start)
        if remember:
            self._warm["coop"] = _shift(p, s.x) if s.x is not None else None
        return p, s


def _dump(i, t, x, soc, a_p, v_p, detail):
    return {"step": i, "time": t, "state": asdict(x), "soc": soc, "a_p": list(a_p), "v_p": list(v_p), "detail": detail}


def run(config: SimConfig, params: Params | None = None, cycle: DriveCycle | None = None) -> SimResult:
    """Closed-loop simulation; raises SimulationError on the first infeasible step."""
    params = params or load_params()
    h = config.horizon
    if cycle is None:
        cycle = load_cycle(default_cycle_path(), h.dt)
    if abs(cycle.dt - h.dt) > 1e-12:
        raise CycleError(f"cycle sampled at {cycle.dt} s but controller dt is {h.dt} s")
    if config.segment is not None:
        cycle = cycle.segment(*config.segment)
    v0 = float(cycle.speed[0]) if config.v0 is None else float(config.v0)
    gap0 = acc_mod.band_midpoint(v0) if config.gap0 is None else float(config.gap0)
    lo, hi = acc_mod.spacing_band(v0)
    if not lo <= gap0 <= hi:
        raise ValueError(f"initial gap {gap0} outside the spacing band [{lo:.3f}, {hi:.3f}]")
    x = AccState(s=gap0, v_r=float(cycle.speed[0]) - v0, v_h=v0, a_prev=0.0)
    soc = float(config.soc0)
    ctrl = Controller(params, config.mode, h, config.solver)
    diag = Controller(params, "coop", h, config.solver) if config.paired else None
    pt = params.powertrain
    records: list[StepRecord] = []
    n_steps = len(cycle.speed) - 1
    for i in range(n_steps):
        t = float(cycle.time[i])
        a_p, v_p = ocp.preview_from_speeds(cycle.preview(i, h.steps), h.dt)
        t0 = time.perf_counter()
        coop_obj = comp_obj = math.nan
        if config.mode == "sequential":
            acc_p, acc_s, ems_p, ems_s = ctrl.sequential(x, soc, a_p, v_p)
            elapsed = time.perf_counter() - t0
            if acc_s.x is None or ems_s is None or ems_s.x is None:
                which = "acc" if acc_s.x is None else "ems"
                raise SimulationError(f"{which} problem infeasible at t={t:.1f}s",
                                      _dump(i, t, x, soc, a_p, v_p, {"notes": ems_p.notes if ems_p else ()}))
            a0 = float(acc_s.x[0])
            u = ems_p.split(ems_s.x)
            traj = ems_p.trajectory(ems_s.x)
            acc_traj = acc_p.trajectory(acc_s.x)
            acc_cost = float(acc_traj["acc_stage"][0] * h.dt)
            objective = acc_s.objective + ems_s.objective
            status, nodes = ems_s.status, ems_s.nodes
            if diag is not None:
                coop_p = ocp.build_coop_problem(x, soc, a_p, v_p, params, h)
                z_seq = ocp.combine(acc_p, acc_s.x, ems_p, ems_s.x, coop_p)
                comp_obj = coop_p.evaluate(z_seq).objective
                _, cs = diag.coop(x, soc, a_p, v_p, warm=z_seq, remember=False)
                coop_obj = cs.objective
        else:
            p, sol = ctrl.coop(x, soc, a_p, v_p)
            elapsed = time.perf_counter() - t0
            if sol.x is None:
                raise SimulationError(f"coop problem infeasible at t={t:.1f}s", _dump(i, t, x, soc, a_p, v_p, {}))
            u = p.split(sol.x)
            a0 = float(u["a"][0])
            traj = p.trajectory(sol.x)
            acc_cost = float(traj["acc_stage"][0] * h.dt)
            objective = sol.objective
            status, nodes = sol.status, sol.nodes

        de0, ic0 = int(round(u["de"][0])), int(round(u["ic"][0]))
        Te, we, Tm, T3 = (float(u[k][0]) for k in ("Te", "we", "Tm", "T3"))
        # plant: the same electrical model the controllers use, driven by the applied move
        P_b = float(traj["P_b"][0])
        T_g = float(traj["T_g"][0])
        fuel = float(traj["fuel"][0]) * h.dt
        try:
            soc_next = powertrain.step_soc(soc, P_b, h.dt, pt.battery)
        except powertrain.InfeasiblePowerError as exc:
            raise SimulationError(str(exc), _dump(i, t, x, soc, a_p, v_p, {})) from None
        b = pt.battery
        if not b.soc_min - config.solver.feas_tol <= soc_next <= b.soc_max + config.solver.feas_tol:
            raise SimulationError(f"SOC {soc_next:.6f} left its bounds at t={t:.1f}s", _dump(i, t, x, soc, a_p, v_p, {}))
        x_next = acc_mod.propagate(x, float(a_p[0]), a0, h.dt)
        records.append(StepRecord(
            time=t, s=x.s, v_h=x.v_h, v_p=x.v_p, a_h=x_next.a_prev,
            j_h=float(acc_mod.jerk(x.a_prev, x_next.a_prev, h.dt)),
            e=float(acc_mod.distance_error(x.s, x.v_h)), soc=soc,
            T_e=Te, w_e=we, T_m=Tm, T_3=T3, T_g=float(T_g), i_c=ic0, engine_on=de0, P_b=P_b,
            fuel_increment=fuel, acc_cost=acc_cost, ems_cost=float(traj["fuel"][0] + traj["soc_stage"][0]) * h.dt,
            objective=float(objective), status=status, nodes=int(nodes), solve_time=elapsed,
            coop_objective=float(coop_obj), composite_objective=float(comp_obj),
        ))
        if x_next.s <= 0:
            raise SimulationError(f"collision at t={t + h.dt:.1f}s", _dump(i, t, x, soc, a_p, v_p, {}))
        x, soc = x_next, soc_next
    return SimResult(config, records, final_state=x, final_soc=soc)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(r: SimResult) -> str:
    """Step records, one row each, columns in RECORD_COLUMNS order (wall times excluded)."""
    buf = io.StringIO()
    buf.write(",".join(RECORD_COLUMNS) + "\n")
    for rec in r.records:
        buf.write(",".join(_fmt(getattr(rec, c)) for c in RECORD_COLUMNS) + "\n")
    return buf.getvalue()


def timing_csv(r: SimResult) -> str:
    buf = io.StringIO()
    buf.write("time,solve_time_s\n")
    for rec in r.records:
        buf.write(f"{rec.time!r},{rec.solve_time!r}\n")
    return buf.getvalue()


TIMING_KEYS = ("mean_solve_time_s", "max_solve_time_s")


def summary_text(r: SimResult, extra: dict[str, object] | None = None) -> str:
    """Key-value summary without wall-clock quantities, so it is bit-stable."""
    m = metrics(r)
    lines = [f"mode = {r.config.mode}"]
    lines += [f"{k} = {v!r}" for k, v in m.items() if k not in TIMING_KEYS]
    lines.append(f"fuel_density_kg_per_l = {r.config.fuel_density!r}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def parse_summary(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
