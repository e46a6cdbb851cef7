"""Acceptance criteria 1-8; each test records a PASS/FAIL line printed in the terminal summary."""
import logging
import math

import numpy as np
import pytest

from suffkit.cli import builtin_config, load_unknowns
from suffkit.dynamics import CARTESIAN, MEOE, kernels
from suffkit.elements import Meoe, meoe_to_cartesian
from suffkit.flow import FlowOptions, propagate
from suffkit.manifold import TargetManifold, tangent_basis
from suffkit.second_order import (
    PreconditionError, VariationalState, build_family_basis, check_condition3, compute_multipliers, delta_trace,
    propagate_family, run_sufficiency, singular_arcs, switching_time_gradient,
)
from suffkit.shooting import (
    ContinuationStuckError, DivergedError, SolverOptions, continue_homotopy, estimate_final_time, initial_guess,
    solve,
)

from conftest import ACCEPTANCE, X0

log = logging.getLogger(__name__)


def _record(k, checks):
    """``checks`` maps a label to ``(ok, text)``; the criterion passes when all do."""
    ok = all(c for c, _ in checks.values())
    ACCEPTANCE[k] = (ok, "; ".join(f"{name} {text} [{'ok' if c else 'FAIL'}]" for name, (c, text) in checks.items()))
    assert ok, ACCEPTANCE[k][1]


def _max_abs_hamiltonian(traj, n=200):
    k = kernels(traj.chart)
    worst = 0.0
    for i, arc in enumerate(traj.arcs):
        _, ys = traj.sample_arc(i, n)
        worst = max(worst, max(abs(float(k.hamiltonian(y[:14], traj.par, arc.branch))) for y in ys))
    return worst


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def _fd_columns(s, E, t, eps=1e-6):
    cols = []
    for j in range(E.shape[1]):
        plus = propagate(s.x0, s.p0 + eps * E[:, j], t, s.engine).evaluate(t, side="left")[:14]
        minus = propagate(s.x0, s.p0 - eps * E[:, j], t, s.engine).evaluate(t, side="left")[:14]
        cols.append((plus - minus) / (2 * eps))
    return np.column_stack(cols)


# --- shipped cases ----------------------------------------------------------------


class Case:
    def __init__(self, name):
        self.cfg = builtin_config(name)
        self.problem = self.cfg.problem()
        self.scales = self.cfg.scales
        opts = SolverOptions(jacobian="variational")
        s = self.cfg.solver
        b = self.cfg.boundary
        self.source = "initial-guess strategy"
        try:
            tf = estimate_final_time(self.problem.x0, b.l_f, b.final["P_km"] / self.scales.length_unit)
            g = initial_guess(self.problem, tf, s.lambda_schedule[0], n_starts=s.n_starts, seed=s.seed,
                              scale=s.guess_scale)
            self.solution = continue_homotopy(g, s.lambda_schedule, self.problem, opts, max_step=s.max_step)
        except (ContinuationStuckError, DivergedError) as exc:
            # documented fallback: converge from the shipped unknowns
            log.warning("%s: continuation failed (%s), using the warm start", name, exc)
            self.source = "warm start"
            u, _ = load_unknowns(s.warm_start)
            self.solution = solve(u, 1.0, self.problem, opts)
        self.traj = self.solution.trajectory

    def sufficiency(self, family, extend_hours=None):
        u = self.solution.unknowns
        ext = None if extend_hours is None else self.scales.from_hours(extend_hours)
        return run_sufficiency(self.problem.x0, u.p0, u.t_f, self.problem.engine, self.problem.manifold, MEOE,
                               self.problem.flow, ext, self.cfg.sufficiency.samples_per_arc, family=family)


@pytest.fixture(scope="module")
def case_a():
    return Case("case_a")


@pytest.fixture(scope="module")
def case_b():
    return Case("case_b")


# --- property suite ---------------------------------------------------------------


def test_criterion_1_hamiltonian_stationarity(short_extremal, case_a):
    h_short = _max_abs_hamiltonian(short_extremal.traj)
    h_a = _max_abs_hamiltonian(case_a.traj)
    _record(1, {"short extremal max|H|": (h_short < 1e-8, f"{h_short:.1e}"),
                "case A max|H|": (h_a < 1e-8, f"{h_a:.1e}")})


def test_criterion_2_free_time_degeneracy_pair(short_extremal):
    s = short_extremal
    full = propagate_family(s.x0, s.p0, s.t_f, s.engine, np.eye(7))
    basis = build_family_basis(s.x0, s.p0, s.engine, reduced=True)
    tr = delta_trace(propagate_family(s.x0, s.p0, s.t_f, s.engine, basis), 100)
    ts, delta = tr.concatenated()
    det_full = np.array([np.linalg.det(full.variations(full.evaluate(t, side="left"))[:7]) for t in ts])
    ratio = float(np.max(np.abs(det_full)) / np.max(np.abs(delta)))
    six = build_family_basis(s.x0, s.p0, s.engine)
    six_singular = singular_arcs(delta_trace(propagate_family(s.x0, s.p0, s.t_f, s.engine, six), 40))
    _record(2, {"max|det dx/dp0| / max|delta|": (ratio < 1e-6, f"{ratio:.1e}"),
                "gauge-free family singular arcs": (singular_arcs(tr) == [], str(singular_arcs(tr))),
                "six-column family singular arcs": (True, f"{six_singular} (informational)")})


def test_criterion_3_variational_oracle(short_extremal):
    s = short_extremal
    E = np.eye(7)
    fam = propagate_family(s.x0, s.p0, s.t_f, s.engine, E)
    assert len(s.traj.switching_times) == 2
    t1 = 0.5 * s.traj.switching_times[0]
    before = _rel_err(fam.variations(fam.evaluate(t1))[:14], _fd_columns(s, E, t1))
    after = _rel_err(fam.variations(fam.final())[:14], _fd_columns(s, E, s.t_f))
    _record(3, {"before first switching": (before < 1e-3, f"{before:.1e}"),
                "after two switchings": (after < 1e-2, f"{after:.1e}")})


def test_criterion_4_switching_time_gradient(short_extremal):
    s = short_extremal
    basis = build_family_basis(s.x0, s.p0, s.engine, reduced=True)
    traj = propagate_family(s.x0, s.p0, s.t_f, s.engine, basis)
    eps = 1e-6
    worst = 0.0
    for i, ev in enumerate(traj.events):
        phi = traj.variations(ev.y_minus)
        grad = switching_time_gradient(ev, VariationalState(phi[:7], phi[7:], ev.t), traj)
        fd = np.array([(propagate(s.x0, s.p0 + eps * e, s.t_f, s.engine).switching_times[i]
                        - propagate(s.x0, s.p0 - eps * e, s.t_f, s.engine).switching_times[i]) / (2 * eps)
                       for e in basis.E.T])
        worst = max(worst, _rel_err(np.asarray(grad), fd))
    _record(4, {"dt_i/dq relative error": (worst < 1e-3, f"{worst:.1e} over {len(traj.events)} switchings")})


def test_criterion_5_coast_volume_and_invariants(case_a_engine):
    opts = FlowOptions()
    x0 = meoe_to_cartesian(Meoe(*X0[:6], 1.0))
    traj = propagate(x0, np.array([1e-3, 0, 0, 0, 0, 0, 0.0]), 10.0, case_a_engine, chart=CARTESIAN,
                     variations=np.eye(14))
    assert traj.burn_count == 0
    det = float(np.linalg.det(traj.variations(traj.final())[:6, :6]))
    xs = np.concatenate([a.y[:, :7] for a in traj.arcs])
    energy = 0.5 * np.sum(xs[:, 3:6] ** 2, axis=1) - 1 / np.linalg.norm(xs[:, :3], axis=1)
    mom = np.cross(xs[:, :3], xs[:, 3:6])
    de = float(np.max(np.abs(energy - energy[0])))
    dh = float(np.max(np.abs(mom - mom[0])))
    tol = 10 * opts.rtol
    _record(5, {"|det - 1|": (abs(det - 1) < 1e-8, f"{abs(det - 1):.1e}"),
                "energy drift": (de < tol, f"{de:.1e}"), "momentum drift": (dh < tol, f"{dh:.1e}")})


def test_criterion_6_manifold_algebra(case_a):
    traj = case_a.traj
    y = traj.final()
    x_f, p_f = y[:7], y[7:14]
    sphere = TargetManifold(s=1, phi=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
                            grad=lambda x: np.array([[2 * x[0], 2 * x[1], 0, 0, 0, 0, 0]]),
                            hessians=lambda x: np.diag([2.0, 2, 0, 0, 0, 0, 0])[None])
    worst_null = worst_orth = 0.0
    for mfd, x in ((case_a.problem.manifold, x_f), (sphere, np.array([0.6, 0.8, 0, 0, 0, 0, 1]))):
        T = tangent_basis(mfd, x)
        worst_null = max(worst_null, float(np.max(np.abs(mfd.grad(x) @ T))))
        worst_orth = max(worst_orth, float(np.max(np.abs(T.T @ T - np.eye(T.shape[1])))))
    mfd = case_a.problem.manifold
    nu = compute_multipliers(x_f, p_f, mfd)
    rec = float(np.linalg.norm(nu @ np.atleast_2d(mfd.grad(x_f)) - p_f))
    _record(6, {"grad(phi) T": (worst_null < 1e-12, f"{worst_null:.1e}"),
                "T^T T - I": (worst_orth < 1e-12, f"{worst_orth:.1e}"),
                "nu reconstruction": (rec < 1e-8, f"{rec:.1e}")})


# --- reproduction of the shipped cases ----------------------------------------------


@pytest.mark.slow
def test_criterion_7_case_a(case_a):
    sc = case_a.scales
    tf_h = sc.hours(case_a.solution.t_f)
    traj = case_a.traj
    red = case_a.sufficiency("reduced")
    try:
        c3 = check_condition3(propagate_family(case_a.problem.x0, case_a.solution.p0, case_a.solution.t_f,
                                               case_a.problem.engine,
                                               build_family_basis(case_a.problem.x0, case_a.solution.p0,
                                                                  case_a.problem.engine)),
                              case_a.problem.manifold)
        scalar = float(c3.matrix[0, 0]) if np.size(c3.matrix) == 1 else math.nan
        c3_text = f"{scalar:.4e}"
    except PreconditionError as exc:
        scalar, c3_text = math.nan, f"unavailable ({exc})"
    if math.isnan(scalar) and red.condition3 is not None and red.condition3.vacuous:
        c3_text += "; gauge-free family: vacuous"
    _record(7, {"source": (True, case_a.source),
                "t_f [h]": (abs(tf_h / 146.36 - 1) <= 5e-3, f"{tf_h:.2f}"),
                "burns": (traj.burn_count == 11, str(traj.burn_count)),
                "switchings": (len(traj.switching_times) == 20, str(len(traj.switching_times))),
                "condition 1": (red.condition1.passed, "gauge-free family"),
                "condition 2": (red.condition2.passed, "gauge-free family"),
                "condition 3 scalar > 0, order 1e11": (scalar > 0 and 1e10 <= scalar < 1e12, c3_text)})


@pytest.mark.slow
def test_criterion_8_case_b(case_b):
    sc = case_b.scales
    tf_h = sc.hours(case_b.solution.t_f)
    rep = case_b.sufficiency("reduced", extend_hours=1000.0)
    ext = rep.extension
    tc = None if ext is None or ext.conjugate_time is None else sc.hours(ext.conjugate_time)
    reach = "" if ext is None else f"scan reached {sc.hours(ext.t_end):.2f} h {ext.stopped}".strip()
    c3 = rep.condition3
    _record(8, {"source": (True, case_b.source),
                "t_f [h]": (abs(tf_h / 316.38 - 1) <= 5e-3, f"{tf_h:.2f}"),
                "condition 1": (rep.condition1.passed, "gauge-free family"),
                "condition 2": (rep.condition2.passed, "gauge-free family"),
                "condition 3": (c3 is not None and c3.passed, "vacuous" if c3 is not None and c3.vacuous else ""),
                "conjugate time [h]": (tc is not None and abs(tc / 982.63 - 1) <= 0.02,
                                       f"{tc if tc is None else round(tc, 2)}; {reach}")})
