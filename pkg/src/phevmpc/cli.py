"""Command-line entry point: ``phevmpc simulate | compare | fitmaps | oracle``.

Exit codes (also printed by ``phevmpc --help``):

    0  success
    2  configuration error (bad flag, unreadable or invalid config/parameter file,
       missing cycle file)
    3  drive-cycle error (malformed cycle content)
    4  solver infeasibility during a closed-loop run (state dump written)
    5  map fitting error (rank-deficient data, fragment rejected by the loader)
    6  comparison refused (runs on different cycles or segments) or oracle mismatch
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, maps, ocp, sim
from .minlp import SolveOptions, solve_bnb, solve_exhaustive
from .params import ParamError, default_params_path, file_digest, load_params, parse_params, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CYCLE = 3
EXIT_INFEASIBLE = 4
EXIT_FIT = 5
EXIT_MISMATCH = 6

MANIFEST = "manifest.json"
RECORDS = "records.csv"
SUMMARY = "summary.txt"
TIMING = "timing.csv"

# metrics shown by ``compare``, in table order
COMPARE_ROWS = (
    ("fuel_kg", "Fuel consumption [kg]"),
    ("fuel_kg_per_100km", "Fuel consumption [kg/100 km]"),
    ("fuel_l_per_100km", "Fuel consumption [L/100 km]"),
    ("final_soc", "Final SOC"),
    ("mean_solve_time_s", "Avg. solve time per step [s]"),
)


class ConfigError(ValueError):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- config


_SIM_KEYS = {"mode": str, "soc0": float, "gap0": float, "v0": float, "horizon": int, "dt": float,
             "segment": str, "fuel_density": float, "paired": bool}
_SOLVER_KEYS = {f.name: f.type for f in fields(SolveOptions) if f.name != "trace"}


def _parse_segment(text: str) -> tuple[float, float]:
    a, sep, b = text.partition(":")
    try:
        if not sep:
            raise ValueError
        t0, t1 = float(a), float(b)
    except ValueError:
        raise ConfigError(f"segment must look like t0:t1, got {text!r}") from None
    if not (math.isfinite(t0) and math.isfinite(t1) and 0 <= t0 < t1):
        raise ConfigError(f"segment needs 0 <= t0 < t1, got {text!r}")
    return t0, t1


def read_config(path: str | Path | None) -> dict:
    """Read the optional run config: ``[sim]`` and ``[solver]`` sections of an INI file."""
    out = {"sim": {}, "solver": {}}
    if path is None:
        return out
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {str(exc).splitlines()[0]}") from None
    for section in cp.sections():
        if section not in out:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _SIM_KEYS if section == "sim" else _SOLVER_KEYS
        for key in cp[section]:
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            kind = schema[key]
            try:
                if kind in (bool, "bool"):
                    value = cp.getboolean(section, key)
                elif kind in (int, "int"):
                    value = cp.getint(section, key)
                elif kind in (str,):
                    value = cp.get(section, key)
                else:
                    value = cp.getfloat(section, key)
            except ValueError:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {cp[section][key]!r}") from None
            out[section][key] = value
    return out


def build_config(args, file_cfg: dict) -> sim.SimConfig:
    s = dict(file_cfg["sim"])
    for key in ("mode", "soc0", "gap0", "v0", "horizon", "dt", "segment", "fuel_density"):
        v = getattr(args, key, None)
        if v is not None:
            s[key] = v
    if args.paired:
        s["paired"] = True
    if "mode" not in s:
        raise ConfigError("--mode is required (sequential or coop), on the command line or in [sim]")
    solver = dict(file_cfg["solver"])
    if args.workers is not None:
        solver["workers"] = args.workers
    try:
        opts = SolveOptions(**solver)
        horizon = ocp.Horizon(int(s.get("horizon", 8)), float(s.get("dt", 0.1)))
        segment = _parse_segment(s["segment"]) if "segment" in s else None
        return sim.SimConfig(
            mode=s["mode"],
            soc0=float(s.get("soc0", 0.6)),
            gap0=s.get("gap0"),
            v0=s.get("v0"),
            horizon=horizon,
            solver=opts,
            segment=segment,
            fuel_density=float(s.get("fuel_density", 0.75)),
            paired=bool(s.get("paired", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_dict(cfg: sim.SimConfig) -> dict:
    d = asdict(replace(cfg, solver=replace(cfg.solver, trace=None)))
    d["solver"].pop("trace", None)
    d["solver"]["time_limit"] = repr(d["solver"]["time_limit"])  # inf is not JSON
    return d


# ---------------------------------------------------------------- simulate


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def cmd_simulate(args) -> int:
    try:
        file_cfg = read_config(args.config)
        cfg = build_config(args, file_cfg)
        params_path = Path(args.params) if args.params else default_params_path()
        if not params_path.is_file():
            raise ConfigError(f"parameter file not found: {params_path}")
        params = load_params(params_path, args.set or ())
        cycle_path = Path(args.cycle) if args.cycle else sim.default_cycle_path()
        if not cycle_path.is_file():
            raise ConfigError(f"cycle file not found: {cycle_path}")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except ParamError as exc:
        return _fail(EXIT_CONFIG, f"parameter file: {exc}")
    try:
        cycle = sim.load_cycle(cycle_path, cfg.horizon.dt)
    except sim.CycleError as exc:
        return _fail(EXIT_CYCLE, str(exc))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_fh = None
    if args.trace:
        trace_fh = open(out / "trace.jsonl", "w")
        cfg = replace(cfg, solver=replace(cfg.solver, trace=lambda line: trace_fh.write(line + "\n")))

    manifest = {
        "tool": "phevmpc",
        "version": __version__,
        "command": "simulate",
        "config": config_dict(cfg),
        "params_path": str(params_path),
        "params_digest": file_digest(params_path),
        "params_overrides": list(args.set or ()),
        "cycle_path": str(cycle_path),
        "cycle_digest": file_digest(cycle_path),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    t0 = time.perf_counter()
    try:
        result = sim.run(cfg, params, cycle)
    except sim.SimulationError as exc:
        (out / "failure.json").write_text(json.dumps(exc.dump, indent=2, sort_keys=True, default=repr) + "\n")
        manifest["status"] = "infeasible"
        manifest["wall_time_s"] = time.perf_counter() - t0
        _write_manifest(out, manifest)
        return _fail(EXIT_INFEASIBLE, f"{exc} (state dump in {out / 'failure.json'})")
    except (sim.CycleError, ValueError) as exc:
        return _fail(EXIT_CONFIG if not isinstance(exc, sim.CycleError) else EXIT_CYCLE, str(exc))
    finally:
        if trace_fh is not None:
            trace_fh.close()
    wall = time.perf_counter() - t0
    records = sim.records_csv(result)
    (out / RECORDS).write_text(records)
    (out / TIMING).write_text(sim.timing_csv(result))
    extra = {"cycle_digest": manifest["cycle_digest"], "records_sha256": _sha256_text(records)}
    (out / SUMMARY).write_text(sim.summary_text(result, extra))
    manifest["status"] = "ok"
    manifest["wall_time_s"] = wall
    manifest["records_sha256"] = extra["records_sha256"]
    _write_manifest(out, manifest)
    m = result.metrics()
    print(f"{cfg.mode}: {int(m['steps'])} steps, fuel {m['fuel_kg']:.6f} kg "
          f"({m['fuel_l_per_100km']:.3f} L/100 km), final SOC {m['final_soc']:.4f}, "
          f"mean solve {m['mean_solve_time_s']:.4f} s -> {out}")
    return EXIT_OK


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- compare


def _load_run(path: Path) -> tuple[dict, dict]:
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        summary = sim.parse_summary((path / SUMMARY).read_text())
        times = np.loadtxt(path / TIMING, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path} is not a complete run directory ({exc})") from None
    m = {k: float(summary[k]) for k, _ in COMPARE_ROWS if k in summary}
    m["mean_solve_time_s"] = float(times[:, 1].mean()) if times.size else 0.0
    return manifest, m


def _same_run_basis(a: dict, b: dict) -> str | None:
    if a.get("cycle_digest") != b.get("cycle_digest"):
        return "runs use different drive cycles"
    ca, cb = a.get("config", {}), b.get("config", {})
    for key in ("segment", "horizon"):
        if ca.get(key) != cb.get(key):
            return f"runs differ in {key}: {ca.get(key)} vs {cb.get(key)}"
    return None


def comparison_table(name_a: str, ma: dict, name_b: str, mb: dict) -> str:
    deltas = sim.compare_metrics(ma, mb, [k for k, _ in COMPARE_ROWS])
    width = max(len(label) for _, label in COMPARE_ROWS)
    lines = [f"{'':<{width}}  {name_a:>14}  {name_b:>14}  {'change [%]':>10}"]
    for key, label in COMPARE_ROWS:
        d = deltas[key]
        dtxt = "n/a" if not math.isfinite(d) else f"{d:+.1f}"
        lines.append(f"{label:<{width}}  {ma[key]:>14.6g}  {mb[key]:>14.6g}  {dtxt:>10}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    try:
        man_a, ma = _load_run(Path(args.dir_a))
        man_b, mb = _load_run(Path(args.dir_b))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    why = _same_run_basis(man_a, man_b)
    if why is not None:
        return _fail(EXIT_MISMATCH, f"refusing to compare: {why}")
    name_a = man_a.get("config", {}).get("mode", "A")
    name_b = man_b.get("config", {}).get("mode", "B")
    if name_a == name_b:
        name_a, name_b = f"A ({name_a})", f"B ({name_b})"
    print(comparison_table(name_a, ma, name_b, mb))
    return EXIT_OK


# ---------------------------------------------------------------- fitmaps


def _parse_box(items) -> dict:
    box = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        try:
            if not sep:
                raise ValueError
            box[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--box expects key=value, got {item!r}") from None
    return box


def fit_fragment(target: str, samples: maps.GridSamples, w_m1=None, w_m2=None, box=None) -> tuple[str, str]:
    """(fragment, report) for one target map."""
    box = dict(box or {})
    if target in ("engine", "generator"):
        fit = maps.fit_quadratic_surface(samples)
        report = fit.summary()
    elif target == "motor":
        if w_m1 is None or w_m2 is None:
            raise maps.FitError("motor fits need --w-m1 and --w-m2")
        fit = maps.fit_piecewise_motor(samples, w_m1, w_m2)
        report = fit.summary()
    elif target in ("voc", "res"):
        fit = maps.fit_quadratic_curve(samples)
        report = fit.summary()
    else:
        raise maps.FitError(f"unknown fit target {target!r}")
    return maps.fragment(target, fit, **box), report


def fragment_overrides(text: str) -> list[str]:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    return [f"{s}.{k}={v}" for s in cp.sections() for k, v in cp[s].items()]


def cmd_fitmaps(args) -> int:
    try:
        box = _parse_box(args.box)
        base_path = Path(args.params) if args.params else default_params_path()
        base_text = base_path.read_text()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot read parameter file: {exc.strerror}")
    try:
        samples = maps.read_samples(args.samples)
        text, report = fit_fragment(args.target, samples, args.w_m1, args.w_m2, box)
    except FileNotFoundError:
        return _fail(EXIT_CONFIG, f"samples file not found: {args.samples}")
    except maps.FitError as exc:
        return _fail(EXIT_FIT, str(exc))
    try:
        # the fragment must drop into a parameter file and pass validation
        validate(parse_params(base_text, fragment_overrides(text)))
    except ParamError as exc:
        print(report, file=sys.stderr)
        return _fail(EXIT_FIT, f"fitted fragment rejected by the parameter loader: {exc}")
    print(f"# fit report ({args.target}, {len(samples)} samples)", file=sys.stderr)
    print(report, file=sys.stderr)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- oracle


def cmd_oracle(args) -> int:
    """Seeded random instances: branch-and-bound against exhaustive enumeration."""
    try:
        params = load_params(args.params, args.set or ())
    except (ParamError, OSError) as exc:
        return _fail(EXIT_CONFIG, f"parameter file: {exc}")
    rng = np.random.default_rng(args.seed)
    opts = SolveOptions(workers=args.workers or 1)
    worst = 0.0
    bad = 0
    for i in range(args.count):
        p = ocp.random_problem(rng, args.variant, params, args.steps)
        b = solve_bnb(p, opts)
        e = solve_exhaustive(p, opts)
        diff = b.objective - e.objective if math.isfinite(e.objective) else (0.0 if not math.isfinite(b.objective) else math.inf)
        ok = abs(diff) <= args.tol
        bad += not ok
        worst = max(worst, abs(diff))
        print(f"{i:4d} {p.variant:5s} bnb={b.objective:.9g} exhaustive={e.objective:.9g} diff={diff:+.2e} "
              f"nodes={b.nodes} {'ok' if ok else 'MISMATCH'}")
    print(f"{args.count - bad}/{args.count} agree within {args.tol:g} (worst {worst:.2e})")
    return EXIT_OK if bad == 0 else EXIT_MISMATCH


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="phevmpc",
        description="Closed-loop MPC of car following and PHEV energy management.",
        epilog="exit codes: 0 ok, 2 config error, 3 cycle error, 4 solver infeasible, "
               "5 fit error, 6 comparison refused / oracle mismatch",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the closed loop over a drive cycle")
    s.add_argument("--cycle", help="cycle CSV (time_s,speed_mps); default: shipped WLTC class 3b")
    s.add_argument("--mode", choices=sim.MODES)
    s.add_argument("--params", help="parameter file; default: $PHEVMPC_PARAMS or the shipped defaults")
    s.add_argument("--config", help="INI file with [sim] and [solver] sections")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--segment", help="cycle window t0:t1 in seconds")
    s.add_argument("--horizon", type=int, help="prediction steps N")
    s.add_argument("--dt", type=float, help="controller step [s]")
    s.add_argument("--soc0", type=float)
    s.add_argument("--gap0", type=float)
    s.add_argument("--v0", type=float)
    s.add_argument("--fuel-density", dest="fuel_density", type=float, help="kg/L for volumetric economy")
    s.add_argument("--paired", action="store_true", help="sequential runs: also solve coop from every state")
    s.add_argument("--workers", type=int, help="threads for leaf and relaxation solves")
    s.add_argument("--trace", action="store_true", help="write branch-and-bound events to trace.jsonl")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="parameter override")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="tabulate two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("fitmaps", help="fit a quadratic map and print a parameter-file fragment")
    f.add_argument("--target", required=True, choices=("engine", "generator", "motor", "voc", "res"))
    f.add_argument("--samples", required=True, help="CSV x,y,value (maps) or x,value (battery curves)")
    f.add_argument("--w-m1", dest="w_m1", type=float, help="motor breakpoint 1 [rad/s]")
    f.add_argument("--w-m2", dest="w_m2", type=float, help="motor breakpoint 2 [rad/s]")
    f.add_argument("--box", action="append", metavar="KEY=VALUE", help="extra section key, e.g. w_min=125")
    f.add_argument("--params", help="parameter file the fragment is validated against")
    f.add_argument("--out", help="write the fragment here instead of stdout")
    f.set_defaults(func=cmd_fitmaps)

    o = sub.add_parser("oracle", help="cross-check branch-and-bound against enumeration on random instances")
    o.add_argument("--seed", type=int, required=True)
    o.add_argument("--count", type=int, default=10)
    o.add_argument("--variant", choices=("ems", "coop"), default="coop")
    o.add_argument("--steps", type=int, default=3)
    o.add_argument("--tol", type=float, default=1e-6)
    o.add_argument("--workers", type=int)
    o.add_argument("--params")
    o.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    o.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
