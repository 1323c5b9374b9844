"""Finite-horizon transcriptions of the ACC, EMS and co-optimization problems.

Decision vectors are laid out row-major: one row per control name, one
column per step, so index ``rows.index(name) * N + k`` holds ``name[k]``.
The car-following states and SOC are rolled out from the controls with
explicit Euler, which makes every dynamics equality hold by construction;
the remaining equalities are the motor torque balance and the clutch speed
coupling.

Cost timing: stage ``k`` charges the controls of step ``k`` and the states
reached at step ``k + 1``.

Constraint convention: ``eq(z) == 0`` and ``ineq(z) <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import acc as acc_mod
from .acc import AccState
from .params import Params, quad2, quad2_grad

VARIANTS = ("acc", "ems", "coop")
ROWS = {
    "acc": ("a",),
    "ems": ("Te", "we", "Tm", "T3", "de", "ic"),
    "coop": ("a", "Te", "we", "Tm", "T3", "de", "ic"),
}
BINARY_ROWS = ("de", "ic")
_SCALE = {"a": 1.0, "Te": 100.0, "we": 300.0, "Tm": 100.0, "T3": 100.0, "de": 1.0, "ic": 1.0}

# inequality blocks, N rows each; the ACC speed bounds are absent for ems
_EMS_INEQ = (
    "engine_speed_lo", "engine_speed_hi", "engine_torque_lo", "engine_torque_hi", "clutch_le_engine",
    "clutch_speed_lo", "clutch_speed_hi", "gear3_torque_hi", "gen_torque_lo", "gen_torque_hi",
    "gen_speed_hi", "motor_speed_hi", "battery_power", "soc_lo", "soc_hi",
)
_ACC_INEQ = ("speed_lo", "speed_hi")
_EMS_EQ = ("torque_balance", "clutch_coupling")

# admissible (engine_on, clutch) per step
PATTERNS = ((0, 0), (1, 0), (1, 1))


@dataclass(frozen=True)
class Horizon:
    steps: int = 8
    dt: float = 0.1

    def __post_init__(self):
        if self.steps < 1 or self.dt <= 0:
            raise ValueError("horizon needs steps >= 1 and dt > 0")


@dataclass(frozen=True)
class Evaluation:
    objective: float
    eq: np.ndarray
    ineq: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return np.concatenate([self.eq, self.ineq])

    def violation(self) -> float:
        v = 0.0
        if self.eq.size:
            v = float(np.max(np.abs(self.eq)))
        if self.ineq.size:
            v = max(v, float(np.max(self.ineq)))
        return max(v, 0.0)


@dataclass(frozen=True)
class Derivatives:
    objective: np.ndarray
    eq: np.ndarray
    ineq: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    variant: str
    horizon: Horizon
    params: Params
    state: AccState
    soc0: float
    a_p: np.ndarray
    v_p: np.ndarray
    fixed_a: np.ndarray | None
    lb: np.ndarray
    ub: np.ndarray
    notes: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def rows(self) -> tuple[str, ...]:
        return ROWS[self.variant]

    @property
    def n(self) -> int:
        return len(self.rows) * self.horizon.steps

    def index(self, name: str, k: int) -> int:
        return self.rows.index(name) * self.horizon.steps + k

    def block(self, name: str) -> slice:
        N = self.horizon.steps
        r = self.rows.index(name)
        return slice(r * N, (r + 1) * N)

    @property
    def binary_idx(self) -> np.ndarray:
        idx = [self.index(name, k) for name in BINARY_ROWS if name in self.rows for k in range(self.horizon.steps)]
        return np.array(sorted(idx), dtype=int)

    @property
    def var_scale(self) -> np.ndarray:
        return np.repeat([_SCALE[r] for r in self.rows], self.horizon.steps)

    @property
    def eq_names(self) -> tuple[str, ...]:
        return () if self.variant == "acc" else _EMS_EQ

    @property
    def ineq_names(self) -> tuple[str, ...]:
        names = ()
        if self.variant != "ems":
            names += _ACC_INEQ
        if self.variant != "acc":
            names += _EMS_INEQ
        return names

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "ProblemSpec":
        return replace(self, lb=np.asarray(lb, dtype=float), ub=np.asarray(ub, dtype=float), _cache=self._cache)

    def split(self, z) -> dict[str, np.ndarray]:
        z = np.asarray(z, dtype=float).reshape(len(self.rows), self.horizon.steps)
        return {name: z[i] for i, name in enumerate(self.rows)}

    def pack(self, **rows) -> np.ndarray:
        N = self.horizon.steps
        return np.concatenate([np.broadcast_to(np.asarray(rows[r], dtype=float), (N,)) for r in self.rows])

    def accelerations(self, z) -> np.ndarray:
        return self.split(z)["a"] if "a" in self.rows else np.asarray(self.fixed_a, dtype=float)

    def pattern(self, z) -> tuple[tuple[int, int], ...]:
        """Rounded (engine_on, clutch) per step."""
        if self.variant == "acc":
            return ()
        parts = self.split(z)
        return tuple((int(round(d)), int(round(c))) for d, c in zip(parts["de"], parts["ic"]))

    def _eval(self, z: np.ndarray, grad: bool):
        z = np.asarray(z, dtype=float)
        key = (z.tobytes(), grad)
        hit = self._cache.get("last")
        if hit is not None and hit[0] == key:
            return hit[1]
        if not grad:
            hit = self._cache.get("last_grad")
            if hit is not None and hit[0] == z.tobytes():
                return hit[1]
        out = _compute(self, z, grad)
        self._cache["last"] = (key, out)
        if grad:
            self._cache["last_grad"] = (z.tobytes(), out)
        return out

    def evaluate(self, z) -> Evaluation:
        r = self._eval(z, False)
        return Evaluation(r["J"], r["eq"], r["ineq"])

    def gradient(self, z) -> Derivatives:
        r = self._eval(z, True)
        return Derivatives(r["dJ"], r["deq"], r["dineq"])

    def objective_parts(self, z) -> tuple[float, float]:
        """(ACC part, EMS part) of the objective."""
        r = self._eval(z, False)
        return r["J_acc"], r["J_ems"]

    def lock_gap(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Engine speed minus the clutch lock speed per step, and its Jacobian."""
        r = self._eval(z, True)
        return r["traj"]["lock_gap"], r["dgap"]

    def trajectory(self, z) -> dict[str, np.ndarray]:
        """Rolled-out states and derived powertrain signals at ``z``."""
        return self._eval(z, False)["traj"]

    def initial_guess(self, pattern: Sequence[tuple[int, int]] | None = None, base: np.ndarray | None = None) -> np.ndarray:
        return initial_guess(self, pattern, base)


def evaluate(p: ProblemSpec, z) -> Evaluation:
    return p.evaluate(z)


def gradient(p: ProblemSpec, z) -> Derivatives:
    return p.gradient(z)


def _rollout_acc(p: ProblemSpec, a: np.ndarray):
    N, dt = p.horizon.steps, p.horizon.dt
    x = p.state
    zero = np.zeros(1)
    vh = x.v_h + dt * np.concatenate([zero, np.cumsum(a)])
    vr = x.v_r + dt * np.concatenate([zero, np.cumsum(p.a_p - a)])
    s = x.s + dt * np.concatenate([zero, np.cumsum(vr[:-1])])
    return s, vr, vh


def _acc_jacobians(N: int, dt: float):
    j = np.arange(N + 1)[:, None]
    i = np.arange(N)[None, :]
    tri = (i < j).astype(float)
    d_vh = dt * tri
    d_vr = -dt * tri
    d_s = -dt * dt * np.maximum(j - 1 - i, 0)
    return d_s, d_vr, d_vh


def _template(p: ProblemSpec) -> dict:
    """Constant Jacobian entries and index arrays, cached per problem family."""
    tp = p._cache.get("template")
    if tp is not None:
        return tp
    prm = p.params
    N, dt, n = p.horizon.steps, p.horizon.dt, p.n
    kk = np.arange(N)
    tp = {"kk": kk}
    tp["d_s"], tp["d_vr"], tp["d_vh"] = _acc_jacobians(N, dt)
    has_a = "a" in p.rows
    if has_a:
        acol = p.block("a")
        D = np.zeros((2 * N, n))
        D[:N, acol] = -tp["d_vh"][1:]
        D[N:, acol] = tp["d_vh"][1:]
        tp["dineq_acc"] = D
    if p.variant != "acc":
        dtr, eng, veh = prm.drivetrain, prm.engine, prm.vehicle
        cols = {k: p.block(k).start + kk for k in ("Te", "we", "Tm", "T3", "de", "ic")}
        tp["cols"] = cols
        ig, eta_t = dtr.ratio_gen, dtr.gear_eff
        Deq = np.zeros((2 * N, n))
        Deq[kk, cols["Tm"]] = 1.0
        Deq[kk, cols["T3"]] = dtr.engine_to_wheel / dtr.motor_to_wheel
        if has_a:
            Deq[kk, acol.start + kk] = -veh.mass * veh.wheel_radius / (dtr.motor_to_wheel * eta_t)
        tp["deq"] = Deq
        D = np.zeros((len(_EMS_INEQ) * N, n))
        const = {
            0: (("de", eng.w_min), ("we", -1.0)),
            1: (("we", 1.0), ("de", -eng.w_max)),
            2: (("de", eng.T_min), ("Te", -1.0)),
            3: (("Te", 1.0), ("de", -eng.T_max)),
            4: (("ic", 1.0), ("de", -1.0)),
            7: (("T3", 1.0), ("ic", -eng.T_max * eta_t)),
            8: (("Te", -ig * eta_t), ("T3", ig)),
            9: (("Te", ig * eta_t), ("T3", -ig)),
            10: (("we", 1.0 / ig),),
        }
        for b, entries in const.items():
            for name, val in entries:
                D[b * N + kk, cols[name]] = val
        if has_a:
            D[11 * N:12 * N, acol] = dtr.motor_to_wheel / veh.wheel_radius * tp["d_vh"][:-1]
        tp["dineq_ems"] = D
    p._cache["template"] = tp
    return tp


def _compute(p: ProblemSpec, z: np.ndarray, grad: bool) -> dict:
    prm = p.params
    N, dt = p.horizon.steps, p.horizon.dt
    n = p.n
    X = p.split(z)
    has_a = "a" in p.rows
    has_ems = p.variant != "acc"
    a = X["a"] if has_a else np.asarray(p.fixed_a, dtype=float)
    s, vr, vh = _rollout_acc(p, a)
    if grad:
        tp = _template(p)
        d_s, d_vr, d_vh = tp["d_s"], tp["d_vr"], tp["d_vh"]
    if has_a:
        acol = p.block("a")

    out = {"traj": {"s": s, "v_r": vr, "v_h": vh, "a": a}}
    J_acc = 0.0
    dJ = np.zeros(n)
    eq_blocks, deq_blocks, ineq_blocks, dineq_blocks = [], [], [], []

    def rows_zero(m=N):
        return np.zeros((m, n))

    if has_a:
        w = prm.acc
        e, de_ds, de_dv = acc_mod.distance_error_grad(s[1:], vh[1:])
        a_prev = np.concatenate([[p.state.a_prev], a[:-1]])
        jk = (a - a_prev) / dt
        L = (e / w.e_nmax) ** 2 + (vr[1:] / w.v_r_nmax) ** 2 + (a / w.a_min) ** 2 + (jk / w.j_nmax) ** 2
        J_acc = dt * float(np.sum(L))
        out["traj"].update(e=e, jerk=jk, acc_stage=L)
        if grad:
            ge = 2.0 * e / w.e_nmax**2
            g_a = (ge * de_ds) @ d_s[1:] + (ge * de_dv) @ d_vh[1:] + (2.0 * vr[1:] / w.v_r_nmax**2) @ d_vr[1:]
            g_a = g_a + 2.0 * a / w.a_min**2
            gj = 2.0 * jk / (w.j_nmax**2 * dt)
            g_a = g_a + gj
            g_a[:-1] -= gj[1:]
            dJ[acol] += dt * g_a
        g_lo = w.v_min - vh[1:]
        g_hi = vh[1:] - w.v_max
        ineq_blocks += [g_lo, g_hi]
        if grad:
            dineq_blocks.append(tp["dineq_acc"])

    J_ems = 0.0
    if has_ems:
        veh, dtr, eng, mot, gen, bat = (prm.vehicle, prm.drivetrain, prm.engine, prm.motor, prm.generator, prm.battery)
        ems = prm.ems
        Te, we, Tm, T3, de, ic = (X[k] for k in ("Te", "we", "Tm", "T3", "de", "ic"))
        eta_t, ig = dtr.gear_eff, dtr.ratio_gen
        r3, rm = dtr.engine_to_wheel, dtr.motor_to_wheel
        r = veh.wheel_radius
        v = vh[:-1]
        Tw = (veh.mass * a + 0.5 * veh.drag_coeff * veh.air_density * veh.cross_section * v * v
              + np.where(v > 0, veh.rolling_coeff * veh.mass * veh.gravity, 0.0)) * r
        dTw_da = veh.mass * r
        dTw_dv = veh.drag_coeff * veh.air_density * veh.cross_section * v * r
        wm = v / r * rm
        dwm_dv = rm / r
        # fuel
        qf = quad2(eng.be_coeffs, we, Te)
        fuel = qf * we * Te / 3.6e6
        # generator
        # T3 <= ic * T3_max makes T3 vanish with an open clutch, so the gear-3
        # path enters linearly; the product T3 * ic would put a saddle at
        # ic = T3 = 0 in every relaxation
        Tg = ig * eta_t * Te - ig * T3
        wg = we / ig
        # motor efficiency by speed segment
        seg = mot.segment(wm)
        C = mot.coeff_table[seg].T  # (6, N)
        absTm = np.abs(Tm)
        etam = quad2(C, wm, absTm)
        sigma = np.where(Tm < 0, 1.0, -1.0)
        em_s = etam**sigma
        Pm = Tm * wm * em_s
        absTg = np.abs(Tg)
        etag = quad2(gen.coeffs, wg, absTg)
        Pg = Tg * wg * etag
        Pb = Pm - Pg
        # SOC rollout
        Q = bat.capacity
        b1, b2, b3 = bat.voc_coeffs
        c1, c2, c3 = bat.res_coeffs
        soc = np.empty(N + 1)
        soc[0] = p.soc0
        disc_g = np.empty(N)
        if grad:
            dmx, dmy = quad2_grad(C, wm, absTm)
            dPm_dTm = wm * em_s + Tm * wm * sigma * etam ** (sigma - 1.0) * dmy * np.sign(Tm)
            dPm_dwm = Tm * em_s + Tm * wm * sigma * etam ** (sigma - 1.0) * dmx
            dgx, dgy = quad2_grad(gen.coeffs, wg, absTg)
            dPg_dTg = wg * etag + Tg * wg * dgy * np.sign(Tg)
            dPg_dwg = Tg * etag + Tg * wg * dgx
            cols, kk = tp["cols"], tp["kk"]
            dvh0 = d_vh[:-1]
            dPb = rows_zero()
            dPb[kk, cols["Tm"]] = dPm_dTm
            dPb[kk, cols["Te"]] = -dPg_dTg * ig * eta_t
            dPb[kk, cols["T3"]] = dPg_dTg * ig
            dPb[kk, cols["we"]] = -dPg_dwg / ig
            if has_a:
                dPb[:, acol] = (dPm_dwm * dwm_dv)[:, None] * dvh0
            dsoc = np.zeros((N + 1, n))
            ddisc = rows_zero()
        for k in range(N):
            S = soc[k]
            V = b1 * S * S + b2 * S + b3
            R = c1 * S * S + c2 * S + c3
            D = V * V - 4.0 * R * Pb[k]
            sq = np.sqrt(max(D, 1e-12))
            soc[k + 1] = S + dt * (-(V - sq) / (2.0 * R * Q))
            disc_g[k] = 4.0 * R * Pb[k] / (V * V) - 1.0
            if grad:
                dV, dR = 2 * b1 * S + b2, 2 * c1 * S + c2
                dF_dP = -1.0 / (Q * sq)
                dF_dV = -(1.0 - V / sq) / (2.0 * R * Q)
                num = -V + sq
                dF_dR = (-2.0 * Pb[k] / sq) / (2.0 * R * Q) - num / (2.0 * R * R * Q)
                dF_dS = dF_dV * dV + dF_dR * dR
                dsoc[k + 1] = dsoc[k] * (1.0 + dt * dF_dS) + dt * dF_dP * dPb[k]
                kdisc = 4.0 * (dR / (V * V) - 2.0 * R * dV / V**3)
                ddisc[k] = 4.0 * R / (V * V) * dPb[k] + Pb[k] * kdisc * dsoc[k]
        rng = bat.soc_max - bat.soc_min
        soc_cost = ems.lam * ((soc[1:] - ems.soc_ref) / rng) ** 2
        J_ems = dt * float(np.sum(fuel + soc_cost))
        out["traj"].update(
            soc=soc, fuel=fuel, P_b=Pb, T_w=Tw, T_g=Tg, w_g=wg, w_m=wm, eta_m=etam, eta_g=etag, soc_stage=soc_cost,
        )
        # equalities
        h_tq = Tm - (Tw - T3 * r3 * eta_t) / (rm * eta_t)
        wlock = v / r * r3
        h_sp = ic * (we - wlock)
        eq_blocks += [h_tq, h_sp]
        out["traj"]["lock_gap"] = we - wlock
        # inequalities (order matches _EMS_INEQ)
        T3max = eng.T_max * eta_t
        ineq_blocks += [
            de * eng.w_min - we, we - de * eng.w_max, de * eng.T_min - Te, Te - de * eng.T_max, ic - de,
            ic * (eng.w_min - wlock), ic * (wlock - eng.w_max), T3 - ic * T3max, -Tg, Tg - gen.T_max,
            wg - gen.w_max, wm - mot.w_max, disc_g, bat.soc_min - soc[1:], soc[1:] - bat.soc_max,
        ]
        if grad:
            dqx, dqy = quad2_grad(eng.be_coeffs, we, Te)
            g = np.zeros(n)
            g[cols["we"]] = (dqx * we * Te + qf * Te) / 3.6e6
            g[cols["Te"]] = (dqy * we * Te + qf * we) / 3.6e6
            gsoc = 2.0 * ems.lam * (soc[1:] - ems.soc_ref) / rng**2
            dJ += dt * (g + gsoc @ dsoc[1:])
            # equalities: torque balance, clutch coupling
            Deq = tp["deq"].copy()
            Deq[N + kk, cols["ic"]] = we - wlock
            Deq[N + kk, cols["we"]] = ic
            if has_a:
                Deq[:N, acol] += (-dTw_dv / (rm * eta_t))[:, None] * dvh0
                Deq[N:, acol] = (-ic * r3 / r)[:, None] * dvh0
            deq_blocks.append(Deq)
            Dgap = rows_zero()
            Dgap[kk, cols["we"]] = 1.0
            if has_a:
                Dgap[:, acol] = (-r3 / r) * dvh0
            out["dgap"] = Dgap
            D = tp["dineq_ems"].copy()
            D[5 * N + kk, cols["ic"]] = eng.w_min - wlock
            D[6 * N + kk, cols["ic"]] = wlock - eng.w_max
            if has_a:
                D[5 * N:6 * N, acol] = (-ic * r3 / r)[:, None] * dvh0
                D[6 * N:7 * N, acol] = (ic * r3 / r)[:, None] * dvh0
            D[12 * N:13 * N] = ddisc
            D[13 * N:14 * N] = -dsoc[1:]
            D[14 * N:15 * N] = dsoc[1:]
            dineq_blocks.append(D)
    out["J_acc"] = J_acc
    out["J_ems"] = J_ems
    out["J"] = J_acc + J_ems
    out["eq"] = np.concatenate(eq_blocks) if eq_blocks else np.zeros(0)
    out["ineq"] = np.concatenate(ineq_blocks) if ineq_blocks else np.zeros(0)
    if grad:
        out["dJ"] = dJ
        out["deq"] = np.vstack(deq_blocks) if deq_blocks else np.zeros((0, n))
        out["dineq"] = np.vstack(dineq_blocks) if dineq_blocks else np.zeros((0, n))
    return out


def preview_from_speeds(v_p: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """(a_p, v_p) over N steps from N + 1 preceding-vehicle speeds (forward differences)."""
    v_p = np.asarray(v_p, dtype=float)
    return np.diff(v_p) / dt, v_p[:-1]


def _check_preview(h: Horizon, a_p, v_p):
    a_p = np.asarray(a_p, dtype=float)
    v_p = np.asarray(v_p, dtype=float)
    if a_p.shape != (h.steps,) or v_p.shape != (h.steps,):
        raise ValueError(f"preview must have length {h.steps}, got {a_p.shape} and {v_p.shape}")
    return a_p, v_p


def _base_bounds(p_rows: tuple[str, ...], prm: Params, N: int):
    eng, mot, w = prm.engine, prm.motor, prm.acc
    box = {
        "a": (w.a_min, w.a_max),
        "Te": (0.0, eng.T_max),
        "we": (0.0, eng.w_max),
        "Tm": (mot.T_min, mot.T_max),
        "T3": (0.0, eng.T_max * prm.drivetrain.gear_eff),
        "de": (0.0, 1.0),
        "ic": (0.0, 1.0),
    }
    lb = np.repeat([box[r][0] for r in p_rows], N)
    ub = np.repeat([box[r][1] for r in p_rows], N)
    return lb, ub


def _clutch_window(prm: Params, v_h) -> np.ndarray:
    """True where the clutch may close at host speed v_h (engine speed inside its window)."""
    w_lock = np.asarray(v_h) / prm.vehicle.wheel_radius * prm.drivetrain.engine_to_wheel
    return (w_lock >= prm.engine.w_min) & (w_lock <= prm.engine.w_max)


def build_acc_problem(x: AccState, a_p, v_p, params: Params, h: Horizon = Horizon()) -> ProblemSpec:
    a_p, v_p = _check_preview(h, a_p, v_p)
    lb, ub = _base_bounds(ROWS["acc"], params, h.steps)
    return ProblemSpec("acc", h, params, x, float("nan"), a_p, v_p, None, lb, ub)


def build_ems_problem(x: AccState, soc0: float, fixed_a, a_p, v_p, params: Params,
                      h: Horizon = Horizon()) -> ProblemSpec:
    a_p, v_p = _check_preview(h, a_p, v_p)
    fixed_a = np.asarray(fixed_a, dtype=float)
    if fixed_a.shape != (h.steps,):
        raise ValueError(f"fixed acceleration must have length {h.steps}")
    notes = []
    w = params.acc
    if np.any(fixed_a < w.a_min - 1e-9) or np.any(fixed_a > w.a_max + 1e-9):
        notes.append("fixed acceleration outside [a_min, a_max]")
    lb, ub = _base_bounds(ROWS["ems"], params, h.steps)
    p = ProblemSpec("ems", h, params, x, float(soc0), a_p, v_p, fixed_a, lb, ub)
    vh = _rollout_acc(p, fixed_a)[2]
    if np.any(vh[1:] < w.v_min - 1e-9) or np.any(vh[1:] > w.v_max + 1e-9):
        notes.append("fixed acceleration drives v_h outside [v_min, v_max]")
    ic = p.block("ic")
    ub[ic] = np.where(_clutch_window(params, vh[:-1]), ub[ic], 0.0)
    return replace(p, ub=ub, notes=tuple(notes))


def build_coop_problem(x: AccState, soc0: float, a_p, v_p, params: Params, h: Horizon = Horizon()) -> ProblemSpec:
    a_p, v_p = _check_preview(h, a_p, v_p)
    lb, ub = _base_bounds(ROWS["coop"], params, h.steps)
    p = ProblemSpec("coop", h, params, x, float(soc0), a_p, v_p, None, lb, ub)
    # the clutch can only close at steps whose reachable host-speed interval
    # meets the lock window; closing the others up front spares the solver
    # patterns it could only prove infeasible the slow way
    w = params.acc
    k = np.arange(h.steps)
    lo = x.v_h + k * h.dt * w.a_min
    hi = x.v_h + k * h.dt * w.a_max
    lo[1:], hi[1:] = np.maximum(lo[1:], w.v_min), np.minimum(hi[1:], w.v_max)
    ratio = params.drivetrain.engine_to_wheel / params.vehicle.wheel_radius
    reach = (hi * ratio >= params.engine.w_min) & (lo * ratio <= params.engine.w_max) & (lo <= hi)
    ic = p.block("ic")
    ub[ic] = np.where(reach, ub[ic], 0.0)
    return replace(p, ub=ub)


def combine(acc_p: ProblemSpec, acc_z, ems_p: ProblemSpec, ems_z, coop_p: ProblemSpec) -> np.ndarray:
    """The coop decision vector made of a sequential (ACC, EMS) solution pair."""
    a = acc_p.split(acc_z)["a"]
    rows = ems_p.split(ems_z)
    return coop_p.pack(a=a, **rows)


def initial_guess(p: ProblemSpec, pattern: Sequence[tuple[int, int]] | None = None,
                  base: np.ndarray | None = None) -> np.ndarray:
    """Deterministic starting point for a binary pattern.

    Only the acceleration row of ``base`` is used (coop); the powertrain
    rows are rebuilt from the pattern so the start depends on nothing else.
    """
    prm = p.params
    N = p.horizon.steps
    if p.variant == "acc":
        a0 = np.zeros(N) if base is None else p.split(base)["a"]
        return np.clip(p.pack(a=a0), p.lb, p.ub)
    if pattern is None:
        pattern = [(0, 0)] * N
    de = np.array([q[0] for q in pattern], dtype=float)
    ic = np.array([q[1] for q in pattern], dtype=float)
    if "a" in p.rows:
        a = np.zeros(N) if base is None else p.split(base)["a"].copy()
        a = np.clip(a, prm.acc.a_min, prm.acc.a_max)
    else:
        a = np.asarray(p.fixed_a, dtype=float)
    vh = _rollout_acc(p, a)[2][:-1]
    veh, dtr, eng = prm.vehicle, prm.drivetrain, prm.engine
    from .powertrain import wheel_torque

    Tw = wheel_torque(a, vh, veh)
    eta_t = dtr.gear_eff
    w_lock = vh / veh.wheel_radius * dtr.engine_to_wheel
    we = np.where(ic > 0, np.clip(w_lock, eng.w_min, eng.w_max), 0.5 * (eng.w_min + eng.w_max)) * de
    Te = 0.5 * (eng.T_min + eng.T_max) * de
    T3 = np.where(ic > 0, np.clip(Tw / (dtr.engine_to_wheel * eta_t), 0.0, Te * eta_t), 0.0)
    Tm = (Tw - T3 * dtr.engine_to_wheel * eta_t * ic) / (dtr.motor_to_wheel * eta_t)
    rows = dict(Te=Te, we=we, Tm=Tm, T3=T3, de=de, ic=ic)
    if "a" in p.rows:
        rows["a"] = a
    return np.clip(p.pack(**rows), p.lb, p.ub)


def random_problem(rng: np.random.Generator, variant: str, params: Params, steps: int = 4,
                   soc_range: tuple[float, float] = (0.31, 0.7)) -> ProblemSpec:
    """A random but physically sensible instance, for solver cross-checks.

    Host speed, gap (around the band midpoint), relative speed, previous
    acceleration, a smooth preceding-vehicle preview and the initial SOC are
    drawn from ``rng``; EMS instances also draw the fixed acceleration plan.
    """
    if variant not in ("acc", "ems", "coop"):
        raise ValueError(f"unknown variant {variant!r}")
    h = Horizon(steps, 0.1)
    v = rng.uniform(0.0, 25.0)
    x = AccState(s=max(0.5, acc_mod.band_midpoint(v) + rng.normal(0.0, 2.0)), v_r=rng.uniform(-1.0, 1.0),
                 v_h=v, a_prev=rng.uniform(-1.0, 1.0))
    jumps = rng.uniform(-1.5, 1.5, steps) * h.dt
    v_p = np.maximum(np.concatenate([[max(x.v_p, 0.0)], x.v_p + np.cumsum(jumps)]), 0.0)
    a_p, v_p = preview_from_speeds(v_p, h.dt)
    soc = rng.uniform(*soc_range)
    if variant == "acc":
        return build_acc_problem(x, a_p, v_p, params, h)
    if variant == "ems":
        return build_ems_problem(x, soc, rng.uniform(-1.0, 1.5, steps), a_p, v_p, params, h)
    return build_coop_problem(x, soc, a_p, v_p, params, h)
