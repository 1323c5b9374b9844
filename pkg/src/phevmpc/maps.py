"""Least-squares fits of the quadratic component maps from gridded samples.

Bivariate fits use the basis (1, x, y, x^2, xy, y^2) in that order, the same
order the parameter file stores coefficients in.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import format_section, quad2


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class GridSamples:
    x: np.ndarray
    y: np.ndarray | None
    value: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        v = np.asarray(self.value, dtype=float).ravel()
        if x.shape != v.shape:
            raise FitError("x and value lengths differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "value", v)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape != x.shape:
                raise FitError("x and y lengths differ")
            object.__setattr__(self, "y", y)
            need = 6
            keys = np.stack([x, y], axis=1)
        else:
            need = 3
            keys = x[:, None]
        if len(x) < need:
            raise FitError(f"need at least {need} samples, got {len(x)}")
        if not np.all(np.isfinite(keys)) or not np.all(np.isfinite(v)):
            raise FitError("non-finite sample")
        order = np.lexsort(keys.T[::-1])
        ks, vs = keys[order], v[order]
        same = np.all(ks[1:] == ks[:-1], axis=1)
        if np.any(same & (vs[1:] != vs[:-1])):
            raise FitError("duplicate sample location with conflicting values")

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, mask) -> "GridSamples":
        y = None if self.y is None else self.y[mask]
        return GridSamples(self.x[mask], y, self.value[mask])


@dataclass(frozen=True)
class FitReport:
    coeffs: tuple[float, ...]
    max_abs_residual: float
    r_squared: float
    residuals: np.ndarray

    def summary(self) -> str:
        return f"max|res|={self.max_abs_residual:.3e} R^2={self.r_squared:.6f}"


def design_matrix(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=1)


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # column scaling keeps the rank test meaningful when x ~ 1e3 and x^2 ~ 1e6
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    coef, _, rank, sv = np.linalg.lstsq(As, b, rcond=None)
    if rank < A.shape[1] or sv[-1] < 1e-10 * sv[0]:
        raise FitError(f"design matrix rank deficient (rank {rank} < {A.shape[1]})")
    return coef / scale


def _report(coef: np.ndarray, A: np.ndarray, b: np.ndarray) -> FitReport:
    res = b - A @ coef
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    ss_res = float(res @ res)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return FitReport(tuple(float(c) for c in coef), float(np.max(np.abs(res))), r2, res)


def fit_quadratic_surface(s: GridSamples) -> FitReport:
    if s.y is None:
        raise FitError("bivariate fit needs y values")
    A = design_matrix(s.x, s.y)
    return _report(_solve(A, s.value), A, s.value)


def fit_quadratic_curve(s: GridSamples) -> FitReport:
    """Univariate c1 x^2 + c2 x + c3 (battery voltage and resistance ordering)."""
    A = np.stack([s.x * s.x, s.x, np.ones_like(s.x)], axis=1)
    return _report(_solve(A, s.value), A, s.value)


@dataclass(frozen=True)
class PiecewiseFit:
    segments: tuple[FitReport, FitReport, FitReport]
    w_m1: float
    w_m2: float
    # value jump f_right - f_left at each breakpoint, sampled over the torque range
    discontinuity: tuple[float, float]

    @property
    def coeffs(self) -> tuple[tuple[float, ...], ...]:
        return tuple(seg.coeffs for seg in self.segments)

    def summary(self) -> str:
        lines = [f"f{i + 1}: {seg.summary()}" for i, seg in enumerate(self.segments)]
        lines.append(
            f"max jump at w_m1={self.w_m1:g}: {self.discontinuity[0]:.3e}; "
            f"at w_m2={self.w_m2:g}: {self.discontinuity[1]:.3e}"
        )
        return "\n".join(lines)


def split_segments(x: np.ndarray, w_m1: float, w_m2: float) -> list[np.ndarray]:
    """Masks for the three speed segments; breakpoint rows fall in the middle one."""
    return [x < w_m1, (x >= w_m1) & (x <= w_m2), x > w_m2]


def fit_piecewise_motor(s: GridSamples, w_m1: float, w_m2: float) -> PiecewiseFit:
    """Three independent surface fits of motor efficiency over speed segments.

    ``y`` holds torque; fits are on |T| since the map is even in torque.
    """
    if s.y is None:
        raise FitError("motor fit needs torque values")
    if not w_m1 < w_m2:
        raise FitError("need w_m1 < w_m2")
    abs_s = GridSamples(s.x, np.abs(s.y), s.value)
    fits = []
    for i, mask in enumerate(split_segments(abs_s.x, w_m1, w_m2)):
        if not np.any(mask):
            raise FitError(f"segment f{i + 1} is empty")
        if np.count_nonzero(mask) < 6:
            raise FitError(f"segment f{i + 1} has fewer than 6 samples")
        fits.append(fit_quadratic_surface(abs_s.subset(mask)))
    t = np.linspace(0.0, float(np.max(abs_s.y)), 51)
    jumps = tuple(
        float(np.max(np.abs(quad2(fits[j + 1].coeffs, w, t) - quad2(fits[j].coeffs, w, t))))
        for j, w in enumerate((w_m1, w_m2))
    )
    return PiecewiseFit(tuple(fits), float(w_m1), float(w_m2), jumps)


def read_samples(path: str | Path) -> GridSamples:
    """CSV with header ``x,y,value`` (bivariate) or ``x,value`` (univariate)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FitError(f"{path}: empty file") from None
        if header not in (["x", "y", "value"], ["x", "value"]):
            raise FitError(f"{path}: header must be x,y,value or x,value")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FitError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise FitError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise FitError(f"{path}: no data rows")
    data = np.array(rows)
    if len(header) == 3:
        return GridSamples(data[:, 0], data[:, 1], data[:, 2])
    return GridSamples(data[:, 0], None, data[:, 1])


def fragment(target: str, fit, **box) -> str:
    """Parameter-file fragment for one fitted map.

    ``target`` is ``engine``, ``generator``, ``motor``, ``voc`` or ``res``;
    ``box`` carries the limits the section also needs (w_min, T_max, ...).
    """
    if target == "engine":
        return format_section("engine", {"be_coeffs": fit.coeffs, **box})
    if target == "generator":
        return format_section("generator", {"coeffs": fit.coeffs, **box})
    if target == "motor":
        f1, f2, f3 = fit.coeffs
        return format_section("motor", {"f1": f1, "f2": f2, "f3": f3, "w_m1": fit.w_m1, "w_m2": fit.w_m2, **box})
    if target in ("voc", "res"):
        return format_section("battery", {f"{target}_coeffs": fit.coeffs, **box})
    raise FitError(f"unknown fit target {target!r}")
