"""Parameter containers and the INI parameter-file loader.

Every physical constant, fitted map coefficient, component limit and cost
weight lives in one plain-text INI document.  ``load_params`` validates each
invariant and raises :class:`ParamError` naming the first offending key.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

PARAMS_ENV_VAR = "PHEVMPC_PARAMS"


class ParamError(ValueError):
    """Invalid parameter file; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def quad2(c, x, y):
    """Bivariate quadratic on the basis (1, x, y, x^2, xy, y^2)."""
    return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y


def quad2_grad(c, x, y):
    """Partial derivatives of :func:`quad2` with respect to x and y."""
    return c[1] + 2.0 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2.0 * c[5] * y


def quad2_range_on_box(c, x_lo: float, x_hi: float, y_lo: float, y_hi: float) -> tuple[float, float]:
    """Exact (min, max) of a bivariate quadratic over a closed box.

    Extrema sit at corners, at stationary points of the four edge
    restrictions, or at the interior stationary point.
    """
    c = np.asarray(c, dtype=float)
    pts = [(x_lo, y_lo), (x_lo, y_hi), (x_hi, y_lo), (x_hi, y_hi)]
    # edges y = const: d/dx = c1 + 2 c3 x + c4 y = 0
    for y in (y_lo, y_hi):
        if c[3] != 0.0:
            x = -(c[1] + c[4] * y) / (2.0 * c[3])
            if x_lo <= x <= x_hi:
                pts.append((x, y))
    for x in (x_lo, x_hi):
        if c[5] != 0.0:
            y = -(c[2] + c[4] * x) / (2.0 * c[5])
            if y_lo <= y <= y_hi:
                pts.append((x, y))
    hess = np.array([[2.0 * c[3], c[4]], [c[4], 2.0 * c[5]]])
    if abs(np.linalg.det(hess)) > 1e-300:
        x, y = np.linalg.solve(hess, -c[1:3])
        if x_lo <= x <= x_hi and y_lo <= y <= y_hi:
            pts.append((x, y))
    vals = [float(quad2(c, x, y)) for x, y in pts]
    return min(vals), max(vals)


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    cross_section: float
    wheel_radius: float
    rolling_coeff: float
    air_density: float
    drag_coeff: float
    gravity: float = 9.81
    road_grade: float = 0.0


@dataclass(frozen=True)
class DrivetrainParams:
    ratio_gear3: float
    ratio_motor: float
    ratio_final: float
    ratio_gen: float
    gear_eff: float

    @property
    def engine_to_wheel(self) -> float:
        """Composite engine-to-wheel ratio through gear 3 (i_3 * i_d)."""
        return self.ratio_gear3 * self.ratio_final

    @property
    def motor_to_wheel(self) -> float:
        return self.ratio_motor * self.ratio_final


@dataclass(frozen=True)
class EngineMap:
    be_coeffs: tuple[float, ...]  # g/kWh over (w_e [rad/s], T_e [N m])
    w_min: float
    w_max: float
    T_min: float
    T_max: float


@dataclass(frozen=True)
class MotorMap:
    f1: tuple[float, ...]
    f2: tuple[float, ...]
    f3: tuple[float, ...]
    w_m1: float
    w_m2: float
    w_min: float
    w_max: float
    T_min: float
    T_max: float

    def segment(self, w_m):
        """Segment index (0, 1, 2); breakpoint speeds belong to the middle segment."""
        w_m = np.asarray(w_m, dtype=float)
        return np.where(w_m < self.w_m1, 0, np.where(w_m <= self.w_m2, 1, 2))

    @property
    def coeff_table(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3], dtype=float)


@dataclass(frozen=True)
class GeneratorMap:
    coeffs: tuple[float, ...]
    w_min: float
    w_max: float
    T_min: float
    T_max: float


@dataclass(frozen=True)
class BatteryParams:
    capacity: float  # coulomb
    voc_coeffs: tuple[float, float, float]  # V = b1 SOC^2 + b2 SOC + b3
    res_coeffs: tuple[float, float, float]  # R = c1 SOC^2 + c2 SOC + c3
    soc_min: float
    soc_max: float


@dataclass(frozen=True)
class AccWeights:
    e_nmax: float
    v_r_nmax: float
    j_nmax: float
    a_min: float
    a_max: float
    v_min: float
    v_max: float


@dataclass(frozen=True)
class EmsWeights:
    lam: float
    soc_ref: float


@dataclass(frozen=True)
class PowertrainParams:
    vehicle: VehicleParams
    drivetrain: DrivetrainParams
    engine: EngineMap
    motor: MotorMap
    generator: GeneratorMap
    battery: BatteryParams


@dataclass(frozen=True)
class Params:
    """Everything read from one parameter file."""

    powertrain: PowertrainParams
    acc: AccWeights
    ems: EmsWeights

    @property
    def vehicle(self) -> VehicleParams:
        return self.powertrain.vehicle

    @property
    def drivetrain(self) -> DrivetrainParams:
        return self.powertrain.drivetrain

    @property
    def engine(self) -> EngineMap:
        return self.powertrain.engine

    @property
    def motor(self) -> MotorMap:
        return self.powertrain.motor

    @property
    def generator(self) -> GeneratorMap:
        return self.powertrain.generator

    @property
    def battery(self) -> BatteryParams:
        return self.powertrain.battery


# section name -> (dataclass, {field: expected coefficient count or None for scalar})
_SCHEMA: dict[str, tuple[type, dict[str, int | None]]] = {
    "vehicle": (VehicleParams, {f.name: None for f in fields(VehicleParams)}),
    "drivetrain": (DrivetrainParams, {f.name: None for f in fields(DrivetrainParams)}),
    "engine": (EngineMap, {"be_coeffs": 6, "w_min": None, "w_max": None, "T_min": None, "T_max": None}),
    "motor": (
        MotorMap,
        {"f1": 6, "f2": 6, "f3": 6, "w_m1": None, "w_m2": None, "w_min": None, "w_max": None,
         "T_min": None, "T_max": None},
    ),
    "generator": (GeneratorMap, {"coeffs": 6, "w_min": None, "w_max": None, "T_min": None, "T_max": None}),
    "battery": (
        BatteryParams,
        {"capacity": None, "voc_coeffs": 3, "res_coeffs": 3, "soc_min": None, "soc_max": None},
    ),
    "acc": (AccWeights, {f.name: None for f in fields(AccWeights)}),
    "ems": (EmsWeights, {"lam": None, "soc_ref": None}),
}

_OPTIONAL = {("vehicle", "gravity"), ("vehicle", "road_grade")}


def default_params_path() -> Path:
    """Path of the parameter file used when none is given.

    ``$PHEVMPC_PARAMS`` takes precedence over the shipped defaults.
    """
    env = os.environ.get(PARAMS_ENV_VAR)
    if env:
        return Path(env)
    return Path(str(resources.files("phevmpc") / "data" / "default_params.ini"))


def _parse_number(key: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParamError(key, f"not a number: {text!r}") from None
    if not np.isfinite(value):
        raise ParamError(key, "must be finite")
    return value


def _section_kwargs(cp: configparser.ConfigParser, section: str) -> dict:
    _, spec = _SCHEMA[section]
    if not cp.has_section(section):
        raise ParamError(section, "missing section")
    raw = cp[section]
    for key in raw:
        if key not in spec:
            raise ParamError(f"{section}.{key}", "unknown key")
    out = {}
    for name, count in spec.items():
        key = f"{section}.{name}"
        if name not in raw:
            if (section, name) in _OPTIONAL:
                continue
            raise ParamError(key, "missing")
        if count is None:
            out[name] = _parse_number(key, raw[name])
        else:
            parts = [p for p in raw[name].replace(",", " ").split()]
            if len(parts) != count:
                raise ParamError(key, f"expected {count} values, got {len(parts)}")
            out[name] = tuple(_parse_number(key, p) for p in parts)
    return out


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ParamError(key, message)


def validate(p: Params) -> Params:
    """Check every invariant; raise on the first violation."""
    v = p.vehicle
    for name in ("mass", "cross_section", "wheel_radius", "rolling_coeff", "air_density", "drag_coeff", "gravity"):
        _require(getattr(v, name) > 0, f"vehicle.{name}", "must be > 0")
    _require(v.road_grade == 0.0, "vehicle.road_grade", "only a flat road (0) is modelled")

    d = p.drivetrain
    for name in ("ratio_gear3", "ratio_motor", "ratio_final", "ratio_gen", "gear_eff"):
        _require(getattr(d, name) > 0, f"drivetrain.{name}", "must be > 0")
    _require(d.gear_eff <= 1.0, "drivetrain.gear_eff", "must be <= 1")

    e = p.engine
    _require(0 < e.w_min < e.w_max, "engine.w_min", "need 0 < w_min < w_max")
    _require(0 < e.T_min < e.T_max, "engine.T_min", "need 0 < T_min < T_max")
    lo, _ = quad2_range_on_box(e.be_coeffs, e.w_min, e.w_max, e.T_min, e.T_max)
    _require(lo > 0, "engine.be_coeffs", f"fuel map not positive on the box (min {lo:.4g})")

    m = p.motor
    _require(m.w_min >= 0 and m.w_min <= m.w_m1 < m.w_m2 <= m.w_max, "motor.w_m1",
             "need 0 <= w_min <= w_m1 < w_m2 <= w_max")
    _require(m.T_min < 0 < m.T_max, "motor.T_min", "need T_min < 0 < T_max")
    t_abs = max(-m.T_min, m.T_max)
    spans = ((m.w_min, m.w_m1), (m.w_m1, m.w_m2), (m.w_m2, m.w_max))
    for name, coeffs, (w_lo, w_hi) in zip(("f1", "f2", "f3"), (m.f1, m.f2, m.f3), spans):
        if w_hi <= w_lo:
            continue
        lo, hi = quad2_range_on_box(coeffs, w_lo, w_hi, 0.0, t_abs)
        _require(0 < lo and hi < 1, f"motor.{name}", f"efficiency outside (0,1) on its segment ({lo:.4g}, {hi:.4g})")

    g = p.generator
    _require(0 <= g.w_min < g.w_max, "generator.w_min", "need 0 <= w_min < w_max")
    _require(0 <= g.T_min < g.T_max, "generator.T_min", "need 0 <= T_min < T_max")
    lo, hi = quad2_range_on_box(g.coeffs, g.w_min, g.w_max, g.T_min, g.T_max)
    _require(0 < lo and hi < 1, "generator.coeffs", f"efficiency outside (0,1) on the box ({lo:.4g}, {hi:.4g})")

    b = p.battery
    _require(b.capacity > 0, "battery.capacity", "must be > 0")
    _require(0 <= b.soc_min < b.soc_max <= 1, "battery.soc_min", "need 0 <= soc_min < soc_max <= 1")
    for name, coeffs in (("voc_coeffs", b.voc_coeffs), ("res_coeffs", b.res_coeffs)):
        # univariate quadratic on [soc_min, soc_max], reusing the box routine with a flat y
        c = (coeffs[2], coeffs[1], 0.0, coeffs[0], 0.0, 0.0)
        lo, _ = quad2_range_on_box(c, b.soc_min, b.soc_max, 0.0, 0.0)
        _require(lo > 0, f"battery.{name}", "must stay positive on [soc_min, soc_max]")

    a = p.acc
    for name in ("e_nmax", "v_r_nmax", "j_nmax"):
        _require(getattr(a, name) > 0, f"acc.{name}", "must be > 0")
    _require(a.a_min < 0 < a.a_max, "acc.a_min", "need a_min < 0 < a_max")
    _require(0 <= a.v_min < a.v_max, "acc.v_min", "need 0 <= v_min < v_max")

    w = p.ems
    _require(w.lam >= 0, "ems.lam", "must be >= 0")
    _require(b.soc_min <= w.soc_ref <= b.soc_max, "ems.soc_ref", "must lie in [soc_min, soc_max]")
    return p


def parse_params(text: str, overrides: Iterable[str] = ()) -> Params:
    """Parse INI text; ``overrides`` are ``section.key=value`` strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (T_min vs t_min)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParamError("<file>", str(exc).splitlines()[0]) from None
    for item in overrides:
        path, sep, value = item.partition("=")
        section, dot, key = path.strip().partition(".")
        if not sep or not dot or section not in _SCHEMA:
            raise ParamError(path.strip() or item, "override must look like section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ParamError(section, "unknown section")
    parts = {name: cls(**_section_kwargs(cp, name)) for name, (cls, _) in _SCHEMA.items()}
    pt = PowertrainParams(
        vehicle=parts["vehicle"],
        drivetrain=parts["drivetrain"],
        engine=parts["engine"],
        motor=parts["motor"],
        generator=parts["generator"],
        battery=parts["battery"],
    )
    return validate(Params(powertrain=pt, acc=parts["acc"], ems=parts["ems"]))


def load_params(path: str | os.PathLike | None = None, overrides: Iterable[str] = ()) -> Params:
    path = Path(path) if path is not None else default_params_path()
    return parse_params(path.read_text(), overrides)


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    return repr(float(value))


def format_section(section: str, values: Mapping[str, object]) -> str:
    """Render one INI section in the loader's schema."""
    lines = [f"[{section}]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in values.items()]
    return "\n".join(lines) + "\n"


def dump_params(p: Params) -> str:
    """Serialize a full parameter set; ``parse_params(dump_params(p)) == p``."""
    chunks = []
    for section, obj in (
        ("vehicle", p.vehicle), ("drivetrain", p.drivetrain), ("engine", p.engine),
        ("motor", p.motor), ("generator", p.generator), ("battery", p.battery),
        ("acc", p.acc), ("ems", p.ems),
    ):
        chunks.append(format_section(section, {f.name: getattr(obj, f.name) for f in fields(obj)}))
    return "\n".join(chunks)


def with_overrides(p: Params, **sections) -> Params:
    """Return a copy with some fields replaced, e.g. ``with_overrides(p, ems={"lam": 0})``."""
    pt = p.powertrain
    pt_parts = {}
    for name in ("vehicle", "drivetrain", "engine", "motor", "generator", "battery"):
        if name in sections:
            pt_parts[name] = replace(getattr(pt, name), **sections.pop(name))
    out = replace(p, powertrain=replace(pt, **pt_parts))
    for name in ("acc", "ems"):
        if name in sections:
            out = replace(out, **{name: replace(getattr(out, name), **sections.pop(name))})
    if sections:
        raise KeyError(f"unknown sections {sorted(sections)}")
    return validate(out)
