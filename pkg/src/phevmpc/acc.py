"""Car-following kinematics, the flexible spacing band and the ACC stage cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import AccWeights

# spacing band s_min/s_max = c0 + c1 v + c2 v^2
BAND_MIN = (5.2, 0.7, 0.0705)
BAND_MAX = (6.8, 0.8, 0.0745)


@dataclass(frozen=True)
class AccState:
    s: float  # gap to the preceding vehicle [m]
    v_r: float  # v_p - v_h [m/s]
    v_h: float
    a_prev: float = 0.0  # last applied host acceleration, for the first jerk term

    @property
    def v_p(self) -> float:
        return self.v_r + self.v_h


def spacing_band(v_h):
    v_h = np.asarray(v_h, dtype=float)
    lo = BAND_MIN[0] + BAND_MIN[1] * v_h + BAND_MIN[2] * v_h * v_h
    hi = BAND_MAX[0] + BAND_MAX[1] * v_h + BAND_MAX[2] * v_h * v_h
    return lo[()], hi[()]


def band_midpoint(v_h: float) -> float:
    lo, hi = spacing_band(v_h)
    return float(0.5 * (lo + hi))


def distance_error(s, v_h):
    """Distance outside the spacing band; zero inside it."""
    lo, hi = spacing_band(v_h)
    s = np.asarray(s, dtype=float)
    out = np.where(s < lo, lo - s, np.where(s > hi, s - hi, 0.0))
    return out[()]


def distance_error_grad(s, v_h):
    """(e, de/ds, de/dv_h) with one-sided values chosen on the band interior at the edges."""
    s = np.asarray(s, dtype=float)
    v_h = np.asarray(v_h, dtype=float)
    lo, hi = spacing_band(v_h)
    below, above = s < lo, s > hi
    e = np.where(below, lo - s, np.where(above, s - hi, 0.0))
    de_ds = np.where(below, -1.0, np.where(above, 1.0, 0.0))
    dlo = BAND_MIN[1] + 2.0 * BAND_MIN[2] * v_h
    dhi = BAND_MAX[1] + 2.0 * BAND_MAX[2] * v_h
    de_dv = np.where(below, dlo, np.where(above, -dhi, 0.0))
    return e, de_ds, de_dv


def propagate(x: AccState, a_p: float, a_h: float, dt: float) -> AccState:
    """One explicit-Euler step of the gap dynamics.

    The host cannot reverse: an acceleration that would take v_h below zero
    is cut to the value that stops the vehicle exactly, and that effective
    acceleration is what enters v_r and the jerk memory.
    """
    a_eff = max(a_h, -x.v_h / dt)
    return AccState(
        s=x.s + dt * x.v_r,
        v_r=x.v_r + dt * (a_p - a_eff),
        v_h=max(0.0, x.v_h + dt * a_eff),
        a_prev=a_eff,
    )


def jerk(a_prev, a_h, dt: float):
    return (np.asarray(a_h, dtype=float) - a_prev)[()] / dt


def acc_stage_cost(e, v_r, a_h, j_h, w: AccWeights):
    return (e / w.e_nmax) ** 2 + (v_r / w.v_r_nmax) ** 2 + (a_h / w.a_min) ** 2 + (j_h / w.j_nmax) ** 2
