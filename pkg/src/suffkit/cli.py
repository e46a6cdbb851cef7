"""Command-line front end: ``suffkit solve | check | convert``.

Exit codes: 0 success (or all tests passed), 1 invalid input, 2 solver
failure or uncertifiable solution, 3 a second-order condition failed,
4 a regularity assumption is violated.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from suffkit.dynamics import BURN, MEOE, DynamicsError, kernels
from suffkit.elements import Meoe, UnsupportedOrbitError, cartesian_to_meoe, meoe_to_cartesian
from suffkit.manifold import meoe_target
from suffkit.second_order import root_scaled, run_sufficiency
from suffkit.shooting import (
    ContinuationStuckError, DivergedError, ShootingProblem, ShootingUnknowns, SolverOptions,
    continue_homotopy, estimate_final_time, initial_guess, residual, solve,
)
from suffkit.units import EngineSpec, ScaleSet

log = logging.getLogger("suffkit")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_FAIL, EXIT_ASSUMPTION = 0, 1, 2, 3, 4
ELEMENTS = ("P", "ex", "ey", "hx", "hy", "l")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class EngineConfig:
    thrust_n: float
    isp_s: float
    m0_kg: float
    dry_mass_kg: float


@dataclass(frozen=True)
class BoundaryConfig:
    initial: dict
    final: dict
    l_f: float


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 30
    lambda_schedule: tuple = (0.0, 1.0)
    max_step: float = 0.1
    n_starts: int = 16
    seed: int = 0
    guess_scale: float = 3.0
    warm_start: str | None = None


@dataclass(frozen=True)
class SufficiencyConfig:
    samples_per_arc: int = 400
    extend_to_hours: float | None = None
    rel_threshold: float = 1e-8
    eig_floor: float = 1e-10
    resolution_floor: float = 1e-10
    residual_tol: float = 1e-8
    family: str = "full"


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "suffkit_out"
    root_exponent: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    engine: EngineConfig
    boundary: BoundaryConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    sufficiency: SufficiencyConfig = field(default_factory=SufficiencyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str | None = None

    @property
    def scales(self) -> ScaleSet:
        return ScaleSet(mass_unit=self.engine.m0_kg)

    def engine_spec(self) -> EngineSpec:
        e = self.engine
        return EngineSpec.from_si(e.thrust_n, e.isp_s, e.dry_mass_kg, self.scales)

    def problem(self) -> ShootingProblem:
        sc = self.scales
        b = self.boundary
        x0 = np.array([b.initial["P_km"] / sc.length_unit] + [b.initial[k] for k in ELEMENTS[1:]] + [1.0])
        f = b.final
        mfd = meoe_target(f["P_km"] / sc.length_unit, f["ex"], f["ey"], f["hx"], f["hy"], b.l_f)
        return ShootingProblem(x0, self.engine_spec(), mfd)

    def echo(self) -> dict:
        d = asdict(self)
        d["solver"]["lambda_schedule"] = list(d["solver"]["lambda_schedule"])
        d.pop("source")
        return d


def _section(raw: dict, name: str, required: bool = True) -> dict:
    if name not in raw:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    sec = raw[name]
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    return sec


def _take(sec: dict, prefix: str, cls, positive=(), required=()):
    known = {f for f in cls.__dataclass_fields__}
    for k in sec:
        if k not in known:
            raise ConfigError(f"{prefix}.{k}", "unknown key")
    for k in required:
        if k not in sec:
            raise ConfigError(f"{prefix}.{k}", "missing required key")
    out = {}
    for k, v in sec.items():
        default = cls.__dataclass_fields__[k].default
        if isinstance(default, (str, type(None))) and k not in positive:
            out[k] = v
            continue
        if isinstance(default, tuple):
            if not isinstance(v, (list, tuple)) or not all(isinstance(a, (int, float)) for a in v):
                raise ConfigError(f"{prefix}.{k}", "must be a list of numbers")
            out[k] = tuple(float(a) for a in v)
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{prefix}.{k}", f"must be a number, got {v!r}")
        if k in positive and not v > 0:
            raise ConfigError(f"{prefix}.{k}", f"must be positive, got {v!r}")
        out[k] = int(v) if isinstance(default, int) and not isinstance(default, bool) else float(v)
    return cls(**out)


def _orbit(sec: dict, prefix: str, with_l: bool) -> dict:
    keys = ("P_km",) + ELEMENTS[1:5] + (("l",) if with_l else ())
    for k in sec:
        if k not in keys:
            raise ConfigError(f"{prefix}.{k}", "unknown key")
    out = {}
    for k in keys:
        if k not in sec:
            raise ConfigError(f"{prefix}.{k}", "missing required key")
        v = sec[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{prefix}.{k}", f"must be a number, got {v!r}")
        out[k] = float(v)
    if not out["P_km"] > 0:
        raise ConfigError(f"{prefix}.P_km", "must be positive")
    if out["ex"] ** 2 + out["ey"] ** 2 >= 1.0:
        raise ConfigError(f"{prefix}.ex", "orbit must be elliptic (ex^2 + ey^2 < 1)")
    return out


def parse_config(raw, source: str | None = None) -> RunConfig:
    """Validate a nested mapping into a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    for k in raw:
        if k not in ("engine", "boundary", "solver", "sufficiency", "output"):
            raise ConfigError(k, "unknown section")
    eng = _take(_section(raw, "engine"), "engine", EngineConfig,
                positive=("thrust_n", "isp_s", "m0_kg", "dry_mass_kg"),
                required=("thrust_n", "isp_s", "m0_kg", "dry_mass_kg"))
    if eng.dry_mass_kg >= eng.m0_kg:
        raise ConfigError("engine.dry_mass_kg", "must be below the initial mass")
    bsec = _section(raw, "boundary")
    for k in bsec:
        if k not in ("initial", "final", "l_f", "l_f_over_pi"):
            raise ConfigError(f"boundary.{k}", "unknown key")
    init = _orbit(_section(bsec, "initial"), "boundary.initial", True) if "initial" in bsec else None
    if init is None:
        raise ConfigError("boundary.initial", "missing section")
    if "final" not in bsec:
        raise ConfigError("boundary.final", "missing section")
    fin = _orbit(bsec["final"] if isinstance(bsec["final"], dict) else {}, "boundary.final", False)
    if ("l_f" in bsec) == ("l_f_over_pi" in bsec):
        raise ConfigError("boundary.l_f", "give exactly one of l_f and l_f_over_pi")
    key = "l_f" if "l_f" in bsec else "l_f_over_pi"
    val = bsec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"boundary.{key}", f"must be a number, got {val!r}")
    l_f = float(val) * (math.pi if key == "l_f_over_pi" else 1.0)
    if not l_f > init["l"]:
        raise ConfigError(f"boundary.{key}", "final longitude must exceed the initial one")
    solver = _take(_section(raw, "solver", False), "solver", SolverConfig,
                   positive=("tol", "max_iter", "max_step", "n_starts", "guess_scale"))
    sched = solver.lambda_schedule
    if not sched or any(not 0.0 <= v <= 1.0 for v in sched) or any(b < a for a, b in zip(sched, sched[1:])):
        raise ConfigError("solver.lambda_schedule", "must be non-decreasing values in [0, 1]")
    suff = _take(_section(raw, "sufficiency", False), "sufficiency", SufficiencyConfig,
                 positive=("samples_per_arc", "rel_threshold", "eig_floor", "resolution_floor", "residual_tol"))
    if suff.family not in ("full", "reduced"):
        raise ConfigError("sufficiency.family", "must be 'full' or 'reduced'")
    if suff.extend_to_hours is not None:
        v = suff.extend_to_hours
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError("sufficiency.extend_to_hours", "must be a positive number")
    out = _take(_section(raw, "output", False), "output", OutputConfig, positive=("root_exponent",))
    return RunConfig(eng, BoundaryConfig(init, fin, l_f), solver, suff, out, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return parse_config(raw, str(path))


def builtin_config(name: str) -> RunConfig:
    """Shipped configuration (``case_a`` or ``case_b``)."""
    text = resources.files("suffkit.data").joinpath(f"{name}.yaml").read_text()
    return parse_config(yaml.safe_load(text), f"builtin:{name}")


# --- unknowns artifacts -----------------------------------------------------------


def save_unknowns(path, u: ShootingUnknowns, lam: float, extra: dict | None = None) -> None:
    rec = {"schema": "suffkit.unknowns", "schema_version": SCHEMA_VERSION, "chart": "meoe",
           "lambda": lam, "p0": [float(v) for v in u.p0], "t_f": float(u.t_f)}
    if extra:
        rec.update(extra)
    Path(path).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def load_unknowns(ref: str) -> tuple[ShootingUnknowns, float]:
    """Read unknowns from a path or ``builtin:<name>``."""
    if ref.startswith("builtin:"):
        text = resources.files("suffkit.data").joinpath(ref.split(":", 1)[1] + ".json").read_text()
    else:
        try:
            text = Path(ref).read_text()
        except OSError as exc:
            raise ConfigError("solution", f"cannot read {ref}: {exc}") from exc
    try:
        rec = json.loads(text)
        return ShootingUnknowns(np.array(rec["p0"], dtype=float), float(rec["t_f"])), float(rec.get("lambda", 1.0))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("solution", f"malformed unknowns record: {exc}") from exc


# --- report -----------------------------------------------------------------------


@dataclass
class RunReport:
    command: str
    config: dict | None = None
    status: str = "error"
    exit_code: int = EXIT_INPUT
    failure_class: str | None = None
    message: str = ""
    solution: dict | None = None
    structure: dict | None = None
    fuel_kg: float | None = None
    assumptions: dict | None = None
    sufficiency: dict | None = None
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d = {"schema": "suffkit.run_report", "schema_version": SCHEMA_VERSION, **d}
        return d

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "report.json"
        path.write_text(json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _structure(traj, sc: ScaleSet) -> dict:
    arcs = [{"kind": a.label, "t_start_h": sc.hours(a.t_start), "t_end_h": sc.hours(a.t_end)}
            for a in traj.arcs if a.t_end > a.t_start]
    return {"arcs": arcs, "burn_count": traj.burn_count,
            "switching_count": int(len(traj.switching_times)),
            "switching_times_h": [sc.hours(t) for t in traj.switching_times]}


def _solution_block(u: ShootingUnknowns, lam: float, res_norm: float, sc: ScaleSet, iterations=None) -> dict:
    return {"lambda": lam, "p0": list(u.p0), "t_f": u.t_f, "t_f_hours": sc.hours(u.t_f),
            "residual_norm": res_norm, "iterations": iterations}


def _sufficiency_block(rep, sc: ScaleSet) -> dict:
    c1, c2, c3 = rep.condition1, rep.condition2, rep.condition3
    out = {"family": rep.family, "overall": rep.overall, "failure_class": rep.failure_class,
           "gauge_residual": rep.gauge_residual, "notes": list(rep.notes)}
    if c1 is not None:
        out["condition1"] = {"passed": c1.passed, "zeros_h": [sc.hours(t) for t in c1.zeros],
                             "dips_h": [sc.hours(t) for t in c1.dips], "final_nonzero": c1.final_ok,
                             "singular_arcs": c1.singular_arcs}
    if c2 is not None:
        out["condition2"] = {"passed": c2.passed, "switchings": [
            {"index": s.index, "t_h": sc.hours(s.t), "delta_minus": s.minus, "delta_plus": s.plus,
             "product": s.product, "status": s.status} for s in c2.switchings]}
    if c3 is not None:
        out["condition3"] = {"passed": c3.passed, "vacuous": c3.vacuous, "matrix": c3.matrix,
                             "eigenvalues": c3.eigenvalues, "multipliers": c3.multipliers}
    else:
        out["condition3"] = None
    if rep.trace is not None:
        out["delta_f"] = rep.trace.delta_f
    if rep.extension is not None:
        e = rep.extension
        out["extension"] = {"t_end_h": sc.hours(e.t_end), "zeros_h": [sc.hours(t) for t in e.zeros],
                            "conjugate_time_h": None if e.conjugate_time is None else sc.hours(e.conjugate_time),
                            "switchings": [{"t_h": sc.hours(s.t), "product": s.product, "status": s.status}
                                           for s in e.switchings]}
    return out


CSV_HEADER = (["t"] + list(ELEMENTS) + ["m"] + [f"pr{i}" for i in range(1, 8)]
              + ["rho", "H1", "pv_norm", "delta", "delta_rootscaled"])


def _csv_rows(chart, par, ts, zs, branch, deltas, exponent):
    k = kernels(chart)
    rho = 1.0 if branch == BURN else 0.0
    for j, (t, z) in enumerate(zip(ts, zs)):
        h1 = float(k.efficiency(z, par)) - 1.0
        pv = float(np.linalg.norm(np.asarray(k.primer(z))))
        d = "" if deltas is None else repr(float(deltas[j]))
        ds = "" if deltas is None else repr(float(root_scaled(deltas[j], exponent)))
        yield [repr(float(t))] + [repr(float(v)) for v in z] + [repr(rho), repr(h1), repr(pv), d, ds]


def write_trace_csv(path, chart, par, arcs, exponent: float) -> None:
    """One row per sample; ``arcs`` yields ``(t, z, branch, delta_or_None)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for ts, zs, branch, deltas in arcs:
            w.writerows(_csv_rows(chart, par, ts, zs, branch, deltas, exponent))


def _traj_arcs(traj, n: int = 100):
    for i, arc in enumerate(traj.arcs):
        ts, ys = traj.sample_arc(i, n)
        yield ts, ys[:, :14], arc.branch, None


def _delta_arcs(trace):
    for a in trace.arcs:
        yield a.t, a.z, a.branch, a.delta


def write_switching_csv(path, rep, sc: ScaleSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "t", "t_hours", "delta_minus", "delta_plus", "product", "status"])
        for s in rep.condition2.switchings:
            w.writerow([s.index, repr(s.t), repr(sc.hours(s.t)), repr(s.minus), repr(s.plus),
                        repr(s.product), s.status])


# --- commands ---------------------------------------------------------------------


def _solve_pipeline(cfg: RunConfig, schedule, report: RunReport):
    pb = cfg.problem()
    opts = SolverOptions(tol=cfg.solver.tol, max_iter=cfg.solver.max_iter, jacobian="variational")
    if cfg.solver.warm_start:
        u, lam = load_unknowns(cfg.solver.warm_start)
        log.info("warm start from %s at lambda=%g", cfg.solver.warm_start, lam)
        if lam >= schedule[-1]:
            return solve(u, schedule[-1], pb, opts)
        return continue_homotopy(u, [lam, schedule[-1]], pb, opts, max_step=cfg.solver.max_step)
    t0 = time.perf_counter()
    tf = estimate_final_time(pb.x0, cfg.boundary.l_f, cfg.boundary.final["P_km"] / cfg.scales.length_unit)
    g = initial_guess(pb, tf, schedule[0], n_starts=cfg.solver.n_starts, seed=cfg.solver.seed,
                      scale=cfg.solver.guess_scale)
    report.timings["initial_guess_s"] = time.perf_counter() - t0
    return continue_homotopy(g, schedule, pb, opts, max_step=cfg.solver.max_step)


def cmd_solve(cfg: RunConfig, out: Path, schedule=None) -> RunReport:
    report = RunReport("solve", cfg.echo())
    schedule = list(schedule or cfg.solver.lambda_schedule)
    sc = cfg.scales
    t0 = time.perf_counter()
    try:
        sol = _solve_pipeline(cfg, schedule, report)
    except (DivergedError, ContinuationStuckError, DynamicsError) as exc:
        report.exit_code, report.failure_class, report.message = EXIT_SOLVER, "solver", str(exc)
        last = getattr(exc, "last", None)
        if last is not None:
            report.solution = _solution_block(last.unknowns, last.lam, last.residual_norm, sc, last.iterations)
        report.timings["solve_s"] = time.perf_counter() - t0
        return report
    report.timings["solve_s"] = time.perf_counter() - t0
    traj = sol.trajectory
    report.solution = _solution_block(sol.unknowns, sol.lam, sol.residual_norm, sc, sol.iterations)
    report.structure = _structure(traj, sc)
    report.fuel_kg = (1.0 - traj.final()[6]) * sc.mass_unit
    out.mkdir(parents=True, exist_ok=True)
    save_unknowns(out / "solution.json", sol.unknowns, sol.lam)
    write_trace_csv(out / "trajectory.csv", traj.chart, traj.par, _traj_arcs(traj), cfg.output.root_exponent)
    report.artifacts = {"solution": "solution.json", "trajectory": "trajectory.csv"}
    report.status, report.exit_code = "ok", EXIT_OK
    return report


def cmd_check(cfg: RunConfig, solution_ref: str, out: Path, extend_to_hours=None) -> RunReport:
    report = RunReport("check", cfg.echo())
    sc = cfg.scales
    u, lam = load_unknowns(solution_ref)
    report.solution = _solution_block(u, lam, math.nan, sc)
    pb = cfg.problem()
    t0 = time.perf_counter()
    try:
        res = residual(u, pb, 1.0)
    except DynamicsError as exc:
        report.exit_code, report.failure_class, report.message = EXIT_SOLVER, "not_converged", str(exc)
        return report
    report.solution["residual_norm"] = res.norm
    if lam < 1.0 or not res.norm <= cfg.sufficiency.residual_tol:
        report.exit_code, report.failure_class = EXIT_SOLVER, "not_converged"
        report.message = (f"refusing to certify: shooting residual {res.norm:.3e} at lambda=1 exceeds "
                          f"{cfg.sufficiency.residual_tol:.1e}")
        return report
    ext_h = extend_to_hours if extend_to_hours is not None else cfg.sufficiency.extend_to_hours
    extend_to = None if ext_h is None else sc.from_hours(ext_h)
    s = cfg.sufficiency
    rep = run_sufficiency(pb.x0, u.p0, u.t_f, pb.engine, pb.manifold, MEOE, pb.flow, extend_to,
                          s.samples_per_arc, s.rel_threshold, s.eig_floor, s.family, s.resolution_floor)
    report.timings["check_s"] = time.perf_counter() - t0
    a = rep.assumptions
    report.assumptions = {"regular_hamiltonian": a.regular_hamiltonian, "regular_switchings": a.regular_switchings,
                          "min_gradient_norm": a.min_grad_norm, "min_h1_dot": a.min_h1_dot, "message": a.message}
    report.sufficiency = _sufficiency_block(rep, sc)
    out.mkdir(parents=True, exist_ok=True)
    if rep.trace is not None:
        traj = pb.propagate(u, 1.0)
        report.structure = _structure(traj, sc)
        report.fuel_kg = (1.0 - traj.final()[6]) * sc.mass_unit
        write_trace_csv(out / "delta_trace.csv", MEOE, traj.par, _delta_arcs(rep.trace), cfg.output.root_exponent)
        write_switching_csv(out / "switchings.csv", rep, sc)
        report.artifacts = {"delta_trace": "delta_trace.csv", "switchings": "switchings.csv"}
        if rep.extension is not None:
            write_trace_csv(out / "delta_extension.csv", MEOE, traj.par, _delta_arcs(rep.extension.trace),
                            cfg.output.root_exponent)
            report.artifacts["delta_extension"] = "delta_extension.csv"
    if not a.passed:
        report.exit_code, report.failure_class, report.message = EXIT_ASSUMPTION, "assumption", a.message
    elif rep.overall:
        report.status, report.exit_code = "ok", EXIT_OK
    else:
        report.exit_code, report.failure_class = EXIT_FAIL, rep.failure_class
        report.message = "; ".join(rep.notes)
    return report


def cmd_convert(kind: str, values, length_unit: float | None = None, round_trip: bool = False) -> dict:
    """Convert one record between elements and Cartesian coordinates.

    Element records are ``P, ex, ey, hx, hy, l[, m]``; Cartesian ones are
    ``x, y, z, vx, vy, vz[, m]``.  With ``length_unit`` (km) the inputs and
    outputs are in km and km/s, otherwise canonical.
    """
    sc = ScaleSet() if length_unit is None else ScaleSet(length_unit=length_unit)
    v = np.asarray(values, dtype=float)
    if v.shape not in ((6,), (7,)):
        raise ValueError("a record has 6 or 7 components")
    m = float(v[6]) if v.size == 7 else 1.0
    if kind == "meoe":
        P = v[0] / sc.length_unit if length_unit else v[0]
        e = Meoe(P, *v[1:6], m)
        if e.ex**2 + e.ey**2 >= 1.0:
            raise UnsupportedOrbitError("parabolic or hyperbolic elements")
        x = meoe_to_cartesian(e)
        if length_unit:
            x[:3] *= sc.length_unit
            x[3:6] *= sc.velocity_unit
        rec = {"cartesian": list(x[:6]), "m": m, "radius": float(np.linalg.norm(x[:3]))}
        if round_trip:
            back = cmd_convert("cartesian", list(x), length_unit)["meoe"]
            rec["round_trip_error"] = float(np.max(np.abs(np.array(back) - np.concatenate([v[:6]]))))
        return rec
    if kind == "cartesian":
        x = v[:6].copy()
        if length_unit:
            x[:3] /= sc.length_unit
            x[3:6] /= sc.velocity_unit
        e = cartesian_to_meoe(np.append(x, m))
        arr = e.as_array()
        if length_unit:
            arr[0] *= sc.length_unit
        rec = {"meoe": list(arr[:6]), "m": m}
        if round_trip:
            back = cmd_convert("meoe", list(arr[:6]) + [m], length_unit)["cartesian"]
            rec["round_trip_error"] = float(np.max(np.abs(np.array(back) - v[:6])))
        return rec
    raise ValueError(f"unknown record kind {kind!r}")


# --- entry point ------------------------------------------------------------------


def _setup_logging():
    level = os.environ.get("SUFFKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="suffkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="compute the fuel-optimal extremal")
    s.add_argument("--config", required=True, help="YAML file or builtin:case_a / builtin:case_b")
    s.add_argument("--out", help="output directory (default from config)")
    s.add_argument("--lambda-schedule", help="comma-separated homotopy values, e.g. 0,0.5,1")
    c = sub.add_parser("check", help="second-order test of a converged extremal")
    c.add_argument("--config", required=True)
    c.add_argument("--solution", help="unknowns file written by solve (default: solver.warm_start)")
    c.add_argument("--out")
    c.add_argument("--extend-to", type=float, help="continue the test to this time [h]")
    v = sub.add_parser("convert", help="convert between elements and Cartesian coordinates")
    v.add_argument("--from", dest="kind", choices=("meoe", "cartesian"), required=True)
    v.add_argument("--values", required=True, help="comma-separated record")
    v.add_argument("--length-unit", type=float, help="km per length unit of the record (omit for canonical)")
    v.add_argument("--round-trip", action="store_true")
    return ap


def _config_arg(ref: str) -> RunConfig:
    if ref.startswith("builtin:"):
        return builtin_config(ref.split(":", 1)[1])
    return load_config(ref)


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    if args.command == "convert":
        try:
            vals = [float(s) for s in args.values.split(",")]
            rec = cmd_convert(args.kind, vals, args.length_unit, args.round_trip)
        except (ValueError, UnsupportedOrbitError) as exc:
            print(json.dumps({"error": str(exc)}), file=sys.stderr)
            return EXIT_INPUT
        print(json.dumps(_jsonable(rec), sort_keys=True))
        if args.round_trip and not rec["round_trip_error"] < 1e-10:
            return EXIT_SOLVER
        return EXIT_OK
    out = Path(args.out) if args.out else None
    report = RunReport(args.command)
    try:
        cfg = _config_arg(args.config)
        out = out or Path(cfg.output.directory)
        if args.command == "solve":
            sched = None
            if args.lambda_schedule:
                try:
                    sched = [float(s) for s in args.lambda_schedule.split(",")]
                except ValueError as exc:
                    raise ConfigError("--lambda-schedule", "must be comma-separated numbers") from exc
                if any(not 0 <= s <= 1 for s in sched) or any(b < a for a, b in zip(sched, sched[1:])):
                    raise ConfigError("--lambda-schedule", "must be non-decreasing values in [0, 1]")
            report = cmd_solve(cfg, out, sched)
        else:
            ref = args.solution or cfg.solver.warm_start
            if ref is None:
                raise ConfigError("--solution", "no solution given and no solver.warm_start in the config")
            report = cmd_check(cfg, ref, out, args.extend_to)
    except ConfigError as exc:
        report.exit_code, report.failure_class, report.message = EXIT_INPUT, "config", str(exc)
        print(f"configuration error: {exc}", file=sys.stderr)
    finally:
        report.write(out or Path("suffkit_out"))
    if report.message and report.exit_code not in (EXIT_OK, EXIT_INPUT):
        print(report.message, file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
