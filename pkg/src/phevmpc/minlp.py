"""Branch-and-bound over the per-step engine/clutch binaries.

Continuous subproblems go to scipy's SLSQP (a line-search SQP method) in a
variable-scaled space, with a feasibility-restoration phase deciding
infeasibility.  Every leaf (all binaries fixed) is solved from the same
deterministic start ``ProblemSpec.initial_guess(pattern, base)`` whether it
is reached by the tree search or by exhaustive enumeration, so the two
agree whenever the search does not prune the best pattern.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .ocp import PATTERNS, ProblemSpec

log = logging.getLogger(__name__)

STATUSES = ("optimal", "iteration-limit", "infeasible", "node-limit", "time-limit")


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-6
    gap: float = 1e-6  # absolute optimality gap
    nlp_tol: float = 1e-9  # SLSQP objective/step tolerance in scaled space
    max_nlp_iter: int = 200
    relax_iter: int = 50  # SLSQP budget for branch-and-bound relaxations
    max_nodes: int = 100_000
    time_limit: float = math.inf
    int_tol: float = 1e-6
    workers: int = 1
    local_search: bool = True  # one-step pattern swaps around the final incumbent
    trace: Callable[[str], None] | None = field(default=None, compare=False)

    def __post_init__(self):
        if min(self.feas_tol, self.gap, self.nlp_tol, self.int_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class Solution:
    x: np.ndarray | None
    objective: float
    bound: float
    status: str
    nodes: int = 0
    nlp_iters: int = 0
    wall_time: float = 0.0
    violation: float = math.inf
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.x is not None and self.status != "infeasible"


def _max_violation(p: ProblemSpec, z: np.ndarray) -> float:
    ev = p.evaluate(z)
    bnd = max(float(np.max(p.lb - z, initial=0.0)), float(np.max(z - p.ub, initial=0.0)))
    return max(ev.violation(), bnd)


class _Reduced:
    """Free-variable, scaled view of a problem for SLSQP."""

    def __init__(self, p: ProblemSpec, z0: np.ndarray):
        self.p = p
        self.free = p.lb < p.ub
        self.scale = p.var_scale[self.free]
        self.base = p.lb.copy()
        # rows that cannot move (all their variables fixed) make SLSQP's LSQ subproblem singular
        probe = np.where(np.isfinite(p.ub), 0.5 * (p.lb + p.ub), p.lb)
        probe = np.where(self.free, 0.37 * probe + 0.63 * np.clip(z0, p.lb, p.ub), p.lb)
        d0, d1 = p.gradient(np.clip(z0, p.lb, p.ub)), p.gradient(probe)
        self.eq_rows = np.any(d0.eq[:, self.free] != 0, axis=1) | np.any(d1.eq[:, self.free] != 0, axis=1)
        self.ineq_rows = np.any(d0.ineq[:, self.free] != 0, axis=1) | np.any(d1.ineq[:, self.free] != 0, axis=1)
        # with the clutch flag still free, the coupling ic*(w_e - w_lock) = 0 is
        # handed to SLSQP as |w_e - w_lock| <= M (1 - ic): same integer points,
        # but a relaxation that can move between the open and closed clutch
        N = p.horizon.steps
        self.bigm = np.zeros(N, dtype=bool)
        if "ic" in p.rows:
            self.ic = np.arange(p.block("ic").start, p.block("ic").stop)
            self.bigm = p.lb[self.ic] < p.ub[self.ic]
            self.eq_rows[N:2 * N] &= ~self.bigm
            prm = p.params
            self.big_m = prm.engine.w_max + prm.acc.v_max / prm.vehicle.wheel_radius * prm.drivetrain.engine_to_wheel

    def full(self, y: np.ndarray) -> np.ndarray:
        z = self.base.copy()
        z[self.free] = y * self.scale
        return z

    def reduce(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, self.p.lb, self.p.ub)[self.free] / self.scale

    def bounds(self):
        return list(zip(self.p.lb[self.free] / self.scale, self.p.ub[self.free] / self.scale))

    def fun(self, y):
        return self.p.evaluate(self.full(y)).objective

    def jac(self, y):
        return self.p.gradient(self.full(y)).objective[self.free] * self.scale

    def cons(self):
        out = []
        er, ir, bm = self.eq_rows, self.ineq_rows, self.bigm
        if np.any(er):
            out.append({
                "type": "eq",
                "fun": lambda y: self.p.evaluate(self.full(y)).eq[er],
                "jac": lambda y: self.p.gradient(self.full(y)).eq[np.ix_(er, self.free)] * self.scale,
            })
        if np.any(ir):
            out.append({
                "type": "ineq",
                "fun": lambda y: -self.p.evaluate(self.full(y)).ineq[ir],
                "jac": lambda y: -self.p.gradient(self.full(y)).ineq[np.ix_(ir, self.free)] * self.scale,
            })
        if np.any(bm):
            out.append({"type": "ineq", "fun": self._bigm, "jac": self._bigm_jac})
        return out

    def _bigm(self, y):
        z = self.full(y)
        gap = self.p.lock_gap(z)[0][self.bigm]
        slack = self.big_m * (1.0 - z[self.ic][self.bigm])
        return np.concatenate([slack - gap, slack + gap])

    def _bigm_jac(self, y):
        z = self.full(y)
        dgap = self.p.lock_gap(z)[1][self.bigm]
        dslack = np.zeros_like(dgap)
        dslack[np.arange(dgap.shape[0]), self.ic[self.bigm]] = -self.big_m
        return np.vstack([dslack - dgap, dslack + dgap])[:, self.free] * self.scale

    def _relaxed_residuals(self, z, grad: bool):
        """Model rows with free-clutch couplings swapped for their big-M pairs (eq, ineq[, Jacobians])."""
        ev = self.p.evaluate(z)
        N = self.p.horizon.steps
        keep = np.ones(ev.eq.shape[0], dtype=bool)
        if ev.eq.size:
            keep[N:2 * N] = ~self.bigm
        eq, ineq = ev.eq[keep], ev.ineq
        if np.any(self.bigm):
            ineq = np.concatenate([ineq, -self._bigm(self.reduce(z))])
        if not grad:
            return eq, ineq
        d = self.p.gradient(z)
        deq, dineq = d.eq[keep], d.ineq
        if np.any(self.bigm):
            full = np.zeros((2 * int(self.bigm.sum()), self.p.n))
            full[:, self.free] = -self._bigm_jac(self.reduce(z)) / self.scale
            dineq = np.vstack([dineq, full])
        return eq, ineq, deq, dineq

    def violation(self, z) -> float:
        eq, ineq = self._relaxed_residuals(z, False)
        v = max(float(np.max(np.abs(eq), initial=0.0)), float(np.max(ineq, initial=0.0)))
        bnd = max(float(np.max(self.p.lb - z, initial=0.0)), float(np.max(z - self.p.ub, initial=0.0)))
        return max(v, bnd)

    def infeasibility(self, y):
        z = self.full(y)
        eq, ineq, deq, dineq = self._relaxed_residuals(z, True)
        gpos = np.maximum(ineq, 0.0)
        val = 0.5 * (eq @ eq + gpos @ gpos)
        grad = eq @ deq + gpos @ dineq
        return val, grad[self.free] * self.scale


def _slsqp(red: _Reduced, y0: np.ndarray, opts: SolveOptions, record):
    def cb(y):
        record(red.full(y))

    with warnings.catch_warnings():
        # SLSQP reports (and clips) iterates a rounding error outside the box
        warnings.filterwarnings("ignore", message="Values in x were outside bounds", category=RuntimeWarning)
        res = minimize(
            red.fun, y0, jac=red.jac, method="SLSQP", bounds=red.bounds(), constraints=red.cons(),
            callback=cb, options={"maxiter": opts.max_nlp_iter, "ftol": opts.nlp_tol},
        )
    return res


def solve_nlp(p: ProblemSpec, opts: SolveOptions = SolveOptions(), warm_start: np.ndarray | None = None,
              restart: bool = True) -> Solution:
    """Local solve of the continuous problem; unfixed binaries are relaxed to their bounds.

    The returned point is the best feasible point seen (start, accepted
    iterates, final iterate), so a feasible warm start is never worsened.
    """
    t0 = time.perf_counter()
    z0 = p.initial_guess() if warm_start is None else np.clip(np.asarray(warm_start, dtype=float), p.lb, p.ub)
    if np.any(p.lb > p.ub):
        return Solution(None, math.inf, math.inf, "infeasible", wall_time=time.perf_counter() - t0)
    red = _Reduced(p, z0)
    best = {"z": None, "f": math.inf}
    history: list[float] = []

    def record(z):
        if red.violation(z) <= opts.feas_tol:
            f = p.evaluate(z).objective
            if f < best["f"]:
                best["z"], best["f"] = z.copy(), f
                history.append(f)

    record(z0)
    iters = 0
    if not np.any(red.free):
        status = "optimal" if best["z"] is not None else "infeasible"
        return _finish(p, best, status, iters, history, t0)
    res = _slsqp(red, red.reduce(z0), opts, record)
    log.debug("slsqp: %s (%d it)", res.message, res.nit)
    iters += int(res.nit)
    z = red.full(res.x)
    record(z)
    converged = bool(res.success)
    if best["z"] is None:
        # restoration: minimise the squared constraint violation over the box
        rest = minimize(red.infeasibility, res.x if np.all(np.isfinite(res.x)) else red.reduce(z0), jac=True,
                        method="L-BFGS-B", bounds=red.bounds(),
                        options={"maxiter": 4 * opts.max_nlp_iter, "ftol": 1e-30, "gtol": 1e-14})
        iters += int(rest.nit)
        zr = red.full(rest.x)
        record(zr)
        if best["z"] is None and red.violation(zr) <= 1e3 * opts.feas_tol:
            res = _slsqp(red, rest.x, opts, record)
            iters += int(res.nit)
            record(red.full(res.x))
            converged = bool(res.success)
        if best["z"] is None:
            return _finish(p, best, "infeasible", iters, history, t0)
    if not converged and restart:
        # one warm restart from the best feasible point usually settles SLSQP's line-search exits
        res = _slsqp(red, red.reduce(best["z"]), opts, record)
        iters += int(res.nit)
        record(red.full(res.x))
        converged = bool(res.success)
    status = "optimal" if converged or res.status == 8 else "iteration-limit"
    return _finish(p, best, status, iters, history, t0)


def _finish(p, best, status, iters, history, t0) -> Solution:
    z = best["z"]
    viol = _max_violation(p, z) if z is not None else math.inf
    return Solution(z, best["f"], best["f"], status, nodes=1, nlp_iters=iters,
                    wall_time=time.perf_counter() - t0, violation=viol, history=history)


def propagate_bounds(p: ProblemSpec, lb: np.ndarray, ub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tighten bounds implied by fixed binaries.

    clutch <= engine_on; engine off pins engine torque and speed to 0; an
    open clutch pins the gear-3 torque to 0; engine on moves the engine
    lower bounds to its operating window.
    """
    if "ic" not in p.rows:
        return lb, ub
    eng = p.params.engine
    lb, ub = lb.copy(), ub.copy()
    de, ic = p.block("de"), p.block("ic")
    te, we, t3 = p.block("Te"), p.block("we"), p.block("T3")
    lb[de] = np.maximum(lb[de], lb[ic])
    ub[ic] = np.minimum(ub[ic], ub[de])
    off = ub[de] == 0
    ub[te] = np.where(off, 0.0, ub[te])
    ub[we] = np.where(off, 0.0, ub[we])
    on = lb[de] == 1
    lb[te] = np.where(on, np.maximum(lb[te], eng.T_min), lb[te])
    lb[we] = np.where(on, np.maximum(lb[we], eng.w_min), lb[we])
    ub[t3] = np.where(ub[ic] == 0, 0.0, ub[t3])
    return lb, ub


def _pattern_from_bounds(p: ProblemSpec, lb: np.ndarray) -> tuple[tuple[int, int], ...]:
    return tuple(zip((int(v) for v in lb[p.block("de")]), (int(v) for v in lb[p.block("ic")])))


def solve_leaf(p: ProblemSpec, pattern, opts: SolveOptions, base: np.ndarray | None = None) -> Solution:
    """Fixed-pattern NLP from the canonical start."""
    lb, ub = p.lb.copy(), p.ub.copy()
    for k, (d, c) in enumerate(pattern):
        for name, val in (("de", d), ("ic", c)):
            i = p.index(name, k)
            if not lb[i] <= val <= ub[i]:
                return Solution(None, math.inf, math.inf, "infeasible")
            lb[i] = ub[i] = val
    lb, ub = propagate_bounds(p, lb, ub)
    q = p.with_bounds(lb, ub)
    return solve_nlp(q, opts, warm_start=q.initial_guess(pattern, base))


def _step_patterns(p: ProblemSpec, lb: np.ndarray, ub: np.ndarray) -> list[list[tuple[int, int]]]:
    per_step = []
    for k in range(p.horizon.steps):
        i_d, i_c = p.index("de", k), p.index("ic", k)
        per_step.append([q for q in PATTERNS if lb[i_d] <= q[0] <= ub[i_d] and lb[i_c] <= q[1] <= ub[i_c]])
    return per_step


def admissible_patterns(p: ProblemSpec):
    """All (engine_on, clutch) sequences compatible with the binary bounds, in lexicographic order."""
    return itertools.product(*_step_patterns(p, p.lb, p.ub))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def solve_exhaustive(p: ProblemSpec, opts: SolveOptions = SolveOptions(), warm_start: np.ndarray | None = None) -> Solution:
    """Solve every admissible pattern and keep the best (test oracle)."""
    t0 = time.perf_counter()
    if p.variant == "acc":
        return solve_nlp(p, opts, warm_start)
    patterns = list(admissible_patterns(p))
    sols = _map(lambda q: solve_leaf(p, q, opts, warm_start), patterns, opts.workers)
    best = None
    for s in sols:
        if s.x is not None and (best is None or s.objective < best.objective):
            best = s
    iters = sum(s.nlp_iters for s in sols)
    wall = time.perf_counter() - t0
    if best is None:
        return Solution(None, math.inf, math.inf, "infeasible", nodes=len(sols), nlp_iters=iters, wall_time=wall)
    return replace(best, nodes=len(sols), nlp_iters=iters, wall_time=wall, bound=best.objective, status="optimal")


def _relaxed_start(p: ProblemSpec, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Start for a relaxation: free engine flags at 1/2 with the engine rows scaled to match."""
    z = p.initial_guess([(1, 0)] * p.horizon.steps)
    de, ic = p.block("de"), p.block("ic")
    z[de] = np.where(lb[de] == ub[de], lb[de], 0.5)
    z[ic] = lb[ic]
    for name in ("Te", "we"):
        z[p.block(name)] *= z[de]
    z[p.block("T3")] = 0.0
    return np.clip(z, lb, ub)


def _completions(p: ProblemSpec, lb: np.ndarray, ub: np.ndarray, x: np.ndarray | None):
    """Leaf patterns filling every free step of a node alike, then the rounded relaxation."""
    de, ic = p.block("de"), p.block("ic")
    N = p.horizon.steps
    fills = [np.tile(np.array(q, dtype=float), (N, 1)) for q in PATTERNS]
    if x is not None:
        fills.append(np.stack([np.round(x[de]), np.round(x[ic])], axis=1))
    out = []
    for c in fills:
        d = np.clip(c[:, 0], lb[de], ub[de])
        i = np.clip(c[:, 1], lb[ic], ub[ic])
        i = np.where(i > d, lb[ic], i)
        out.append(tuple((int(a), int(b)) for a, b in zip(d, i)))
    return list(dict.fromkeys(out))


def _pattern_inside(p: ProblemSpec, pattern, lb: np.ndarray, ub: np.ndarray) -> bool:
    de, ic = p.block("de"), p.block("ic")
    q = np.array(pattern, dtype=float)
    return bool(np.all((lb[de] <= q[:, 0]) & (q[:, 0] <= ub[de]) & (lb[ic] <= q[:, 1]) & (q[:, 1] <= ub[ic])))




@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    x: np.ndarray = field(compare=False)


def solve_bnb(p: ProblemSpec, opts: SolveOptions = SolveOptions(), warm_start: np.ndarray | None = None) -> Solution:
    """Best-bound branch-and-bound over the engine and clutch binaries.

    Branches on the most fractional binary, lowest index on ties.  The
    relaxations are nonconvex and solved locally, so a node's bound is also
    capped by the best leaf already solved inside its box, and every node
    solves the leaves that fill its free steps uniformly (all off, all
    engine-only, all clutched, rounded relaxation).  Leaves are always solved
    from the canonical start, as in ``solve_exhaustive``.
    """
    t0 = time.perf_counter()
    if p.variant == "acc":
        return solve_nlp(p, opts, warm_start)
    bins = p.binary_idx
    relax_opts = replace(opts, max_nlp_iter=opts.relax_iter)
    counter = itertools.count()
    stats = {"nodes": 0, "iters": 0}
    inc = {"x": None, "f": math.inf}
    pruned_bounds: list[float] = []
    leaves: dict[tuple, Solution] = {}
    known: dict[tuple, float] = {}  # best objective seen per pattern

    def emit(**event):
        if opts.trace is not None:
            event["incumbent"] = inc["f"] if math.isfinite(inc["f"]) else None
            opts.trace(json.dumps(event, sort_keys=True))

    def offer(sol: Solution, source: str):
        if sol.x is None:
            return
        q = p.pattern(sol.x)
        known[q] = min(known.get(q, math.inf), sol.objective)
        if sol.objective < inc["f"]:
            inc["x"], inc["f"] = sol.x, sol.objective
            emit(event="incumbent", source=source, objective=sol.objective)

    def solve_leaves(patterns, source="leaf"):
        todo = [q for q in dict.fromkeys(patterns) if q not in leaves]
        sols = _map(lambda q: solve_leaf(p, q, opts, warm_start), todo, opts.workers)
        for q, sol in zip(todo, sols):
            leaves[q] = sol
            stats["iters"] += sol.nlp_iters
            offer(sol, source)

    def best_known(lb, ub) -> float:
        return min((f for q, f in known.items() if _pattern_inside(p, q, lb, ub)), default=math.inf)

    def relax(args):
        lb, ub, starts = args
        q = p.with_bounds(lb, ub)
        best = None
        for start in starts:
            sol = solve_nlp(q, relax_opts, warm_start=start, restart=False)
            if best is None or (sol.x is not None and (best.x is None or sol.objective < best.objective)):
                sol.nlp_iters += best.nlp_iters if best is not None else 0
                best = sol
            else:
                best.nlp_iters += sol.nlp_iters
        return best

    def starts_for(lb, ub, parent_x):
        """Relaxation starts: the parent's point clipped to the box, or the relaxed midpoint at the root."""
        return [_relaxed_start(p, lb, ub)] if parent_x is None else [np.clip(parent_x, lb, ub)]

    heap: list[_Node] = []

    def process(lb, ub, sol, parent, parent_bound=-math.inf):
        """Book one evaluated node; ``sol`` is None for a leaf node."""
        stats["nodes"] += 1
        nid = next(counter)
        fixed = {int(i): int(lb[i]) for i in bins if lb[i] == ub[i]}
        if sol is None:
            q = _pattern_from_bounds(p, lb)
            solve_leaves([q])
            leaf = leaves[q]
            status = "leaf" if leaf.x is not None else "infeasible"
            emit(event="node", node=nid, parent=parent, kind="leaf", status=status, bound=leaf.objective, fixed=fixed)
            return
        stats["iters"] += sol.nlp_iters
        solve_leaves(_completions(p, lb, ub, sol.x), "completion")
        if sol.x is None:
            # a local solver failing on a relaxation proves nothing: keep
            # branching under the parent's bound from the relaxed midpoint
            bound = min(parent_bound, best_known(lb, ub))
            emit(event="node", node=nid, parent=parent, kind="relax", status="unsolved", bound=bound, fixed=fixed)
            heapq.heappush(heap, _Node(bound, nid, lb, ub, _relaxed_start(p, lb, ub)))
            return
        bound = min(sol.objective, best_known(lb, ub))
        emit(event="node", node=nid, parent=parent, kind="relax", status="open", bound=bound, fixed=fixed)
        heapq.heappush(heap, _Node(bound, nid, lb, ub, sol.x))

    def expand(entries, parent, parent_bound):
        """Evaluate (lb, ub, start) entries (relaxations concurrently) and book them in order."""
        is_leaf = [bool(np.all(lb[bins] == ub[bins])) for lb, ub, _ in entries]
        todo = [e for e, lf in zip(entries, is_leaf) if not lf]
        sols = iter(_map(relax, todo, opts.workers))
        for (lb, ub, _), lf in zip(entries, is_leaf):
            process(lb, ub, None if lf else next(sols), parent, parent_bound)

    lb0, ub0 = propagate_bounds(p, p.lb, p.ub)
    if warm_start is not None:
        ws = np.clip(np.asarray(warm_start, dtype=float), lb0, ub0)
        if np.all(np.abs(ws[bins] - np.round(ws[bins])) <= opts.int_tol) and _max_violation(p, ws) <= opts.feas_tol:
            offer(Solution(ws, p.evaluate(ws).objective, -math.inf, "optimal"), "warm-start")
        ws_lb, ws_ub = lb0.copy(), ub0.copy()
        ws_ub[bins] = ws_lb[bins] = np.round(ws[bins])
        ws_lb, ws_ub = propagate_bounds(p, ws_lb, ws_ub)
        if np.all(ws_lb <= ws_ub):
            sol = solve_nlp(p.with_bounds(ws_lb, ws_ub), opts, warm_start=ws)
            stats["iters"] += sol.nlp_iters
            offer(sol, "warm-pattern")

    expand([(lb0, ub0, starts_for(lb0, ub0, None))], None, -math.inf)
    status = None
    while heap:
        if stats["nodes"] >= opts.max_nodes:
            status = "node-limit"
            break
        if time.perf_counter() - t0 > opts.time_limit:
            status = "time-limit"
            break
        node = heapq.heappop(heap)
        if node.bound >= inc["f"] - opts.gap:
            pruned_bounds.append(node.bound)
            emit(event="prune", node=node.node_id, bound=node.bound)
            continue
        xb = node.x[bins]
        free = node.lb[bins] < node.ub[bins]
        frac = np.where(free, np.minimum(xb - node.lb[bins], node.ub[bins] - xb), -1.0)
        j = int(np.argmax(frac))  # first maximum -> lowest index on ties
        if frac[j] <= opts.int_tol:
            # integral relaxation: close the subtree with its leaf
            lb, ub = node.lb.copy(), node.ub.copy()
            lb[bins] = ub[bins] = np.round(xb)
            lb, ub = propagate_bounds(p, lb, ub)
            polished = solve_nlp(p.with_bounds(lb, ub), opts, warm_start=node.x)
            stats["iters"] += polished.nlp_iters
            offer(polished, "integral-relaxation")
            expand([(lb, ub, None)], node.node_id, node.bound)
            continue
        var = int(bins[j])
        children = []
        for val in (0.0, 1.0):
            lb, ub = node.lb.copy(), node.ub.copy()
            lb[var] = ub[var] = val
            lb, ub = propagate_bounds(p, lb, ub)
            if np.any(lb > ub):
                continue
            children.append((lb, ub, starts_for(lb, ub, node.x)))
        emit(event="branch", node=node.node_id, var=var, value=float(node.x[var]))
        expand(children, node.node_id, node.bound)
    if opts.local_search and inc["x"] is not None:
        # relaxations are only locally solved, so sweep the leaves that differ
        # from the incumbent in one step until none improves it
        while True:
            base = p.pattern(inc["x"])
            before = inc["f"]
            swaps = []
            for k, opts_k in enumerate(_step_patterns(p, lb0, ub0)):
                for q in opts_k:
                    if q != base[k]:
                        swaps.append(base[:k] + (q,) + base[k + 1:])
            solve_leaves(swaps, "local-search")
            if not inc["f"] < before:
                break
    wall = time.perf_counter() - t0
    open_bounds = [n.bound for n in heap]
    if status is None:
        status = "optimal" if inc["x"] is not None else "infeasible"
    bound = min([inc["f"]] + pruned_bounds + open_bounds)
    if inc["x"] is None:
        return Solution(None, math.inf, bound, status, stats["nodes"], stats["iters"], wall)
    viol = _max_violation(p, inc["x"])
    return Solution(inc["x"], inc["f"], bound, status, stats["nodes"], stats["iters"], wall, viol)
