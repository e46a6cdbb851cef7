"""Second-order optimality tests for bang-bang free-time extremals.

The reference extremal is embedded in the family of extremals issued from
``p0(q) = p0_bar + q E^T`` where the columns of ``E`` span the orthogonal
complement of ``xdot(0)``.  Along the family

    X = dx/dq,  P = dp^T/dq,   X(0) = 0,  P(0) = E

obey the linearized canonical equations on each arc and jump at every
switching.  The determinant ``delta(t) = det[xdot | X]`` carries the
no-fold tests; the matrix ``T^T {[pdot | P][xdot | X]^-1 - sum nu_i d2phi_i} T``
at the final time carries the target-manifold test.

For the fuel cost the costate admits an exact gauge direction (see
:func:`gauge_generator`) that lies in every such family and leaves the state
trajectory unchanged, so ``det[xdot | X]`` vanishes identically.  The
``reduced`` family removes that direction (``E`` spans the complement of
``xdot(0)`` and the generator, 7 x 5) and uses ``det[xdot | X | e_m]``, the
determinant of the projection onto the six orbital coordinates.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import jax
import numpy as np
from scipy.optimize import brentq

from suffkit.dynamics import (
    BURN, CARTESIAN, COAST, MEOE, N_STATE, _field, _resolve, kernels, meoe_phase_to_cartesian, select_branch,
)
from suffkit.flow import ExtremalTrajectory, FlowOptions, PropagationError, RegularityError, pad_pow2, propagate
from suffkit.integrate import NZ
from suffkit.manifold import ManifoldDegeneracyError, TargetManifold, gram_schmidt_complement, tangent_basis
from suffkit.units import EngineSpec

N_FAMILY = N_STATE - 1


class AssumptionError(RuntimeError):
    """A standing regularity assumption of the tests does not hold."""


class RegularHamiltonianError(AssumptionError):
    pass


class RegularSwitchingError(AssumptionError):
    pass


class PreconditionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FamilyBasis:
    E: np.ndarray

    @property
    def size(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True)
class VariationalState:
    X: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def stacked(self) -> np.ndarray:
        return np.vstack([self.X, self.P])

    @classmethod
    def from_stacked(cls, phi, t: float = 0.0) -> "VariationalState":
        phi = np.asarray(phi)
        return cls(phi[:N_STATE].copy(), phi[N_STATE:].copy(), t)


def _initial_field(chart, z0, par) -> tuple[np.ndarray, int]:
    k = kernels(chart)
    lam = float(par[2])
    eff = float(k.efficiency(z0, par))
    br = select_branch(eff, lam)
    return np.asarray(k.field(z0, par, br)), br


def gauge_generator(p, engine: EngineSpec) -> np.ndarray:
    """Costate direction that leaves the fuel-optimal state trajectory unchanged.

    ``p_e -> (1+c) p_e, p_m -> (1+c) p_m + c/(beta u_max)`` multiplies ``H1``
    and ``H`` by ``1 + c``, so the control, ``H = 0`` and ``x(t)`` are kept.
    The generator satisfies ``g . xdot = H`` and hence lies in every family.
    """
    rate = engine.beta * engine.u_max
    if not rate > 0.0:
        raise ValueError("the gauge direction needs a positive mass-flow rate")
    g = np.array(p, dtype=float)
    g[6] += 1.0 / rate
    return g


def build_family_basis(x0, p0_bar, engine: EngineSpec, lam: float = 1.0, chart=MEOE,
                       floor: float = 1e-12, branch: int | None = None,
                       reduced: bool = False) -> FamilyBasis:
    """Orthonormal basis of the complement of ``f(x0, u(x0, p0_bar))``.

    ``reduced=True`` also removes :func:`gauge_generator` and returns 7 x 5.
    """
    chart = _resolve(chart)
    k = kernels(chart)
    z0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(p0_bar, dtype=float)])
    par = np.array([engine.u_max, engine.beta, lam])
    if branch is None:
        f = _initial_field(chart, z0, par)[0][:N_STATE]
    else:
        f = np.asarray(k.field(z0, par, branch))[:N_STATE]
    if np.linalg.norm(f) < floor:
        raise RegularHamiltonianError("the Hamiltonian is not regular at the initial point (dH/dp = 0)")
    rows = [f, gauge_generator(p0_bar, engine)] if reduced else [f]
    return FamilyBasis(gram_schmidt_complement(np.array(rows), N_STATE))


def variational_rhs(t: float, V: VariationalState, derivs) -> VariationalState:
    """Linearized canonical equations with the control branch frozen."""
    Xd = derivs.H_px @ V.X + derivs.H_pp @ V.P
    Pd = -derivs.H_xx @ V.X - derivs.H_xp @ V.P
    return VariationalState(Xd, Pd, t)


def _switch_data(chart, z, par):
    """Gradient of H1 split into (H1_x, H1_p); ``H1_p`` is the control field f1."""
    g = np.asarray(kernels(chart).efficiency_grad(z, par))
    return g[:N_STATE], g[N_STATE:]


def _time_gradient(h1x, h1p, X, P, h1_dot, floor):
    if not abs(h1_dot) > floor:
        raise RegularSwitchingError(f"non-regular switching: dH1/dt = {h1_dot:.3e}")
    return -(h1x @ X + h1p @ P) / h1_dot


def switching_time_gradient(ev, V_minus: VariationalState, traj: ExtremalTrajectory,
                            floor: float = 1e-8) -> np.ndarray:
    """Row vector ``dt_i/dq`` from the implicit function theorem on ``H1 = 0``."""
    h1x, h1p = _switch_data(traj.chart, ev.z, traj.par)
    return _time_gradient(h1x, h1p, V_minus.X, V_minus.P, ev.h1_dot, floor)


def switching_jump(V_minus: VariationalState, ev, traj: ExtremalTrajectory,
                   floor: float = 1e-8) -> VariationalState:
    """Update of ``(X, P)`` across a switching with throttle jump ``delta_rho``."""
    h1x, h1p = _switch_data(traj.chart, ev.z, traj.par)
    dt = _time_gradient(h1x, h1p, V_minus.X, V_minus.P, ev.h1_dot, floor)
    dr = ev.delta_rho
    X = V_minus.X - dr * np.outer(h1p, dt)
    P = V_minus.P + dr * np.outer(h1x, dt)
    return VariationalState(X, P, ev.t)


def _jump_hook(chart, floor):
    """Jump callback for :func:`suffkit.flow.propagate` using the explicit update."""

    def jump(phi, z, par, old, new, sdot):
        lam = float(par[2])
        if lam < 1.0:
            return phi
        h1x, h1p = _switch_data(chart, z, par)
        X, P = phi[:N_STATE], phi[N_STATE:]
        dt = _time_gradient(h1x, h1p, X, P, sdot, floor)
        dr = (1.0 if new == BURN else 0.0) - (1.0 if old == BURN else 0.0)
        return np.vstack([X - dr * np.outer(h1p, dt), P + dr * np.outer(h1x, dt)])

    return jump


def propagate_family(x0, p0, t_f: float, engine: EngineSpec, basis: FamilyBasis | np.ndarray,
                     lam: float = 1.0, chart=MEOE, opts: FlowOptions | None = None,
                     regularity_floor: float | None = None) -> ExtremalTrajectory:
    """Extremal flow carrying ``(X, P)`` with ``X(0) = 0``, ``P(0) = E``."""
    chart = _resolve(chart)
    opts = opts or FlowOptions()
    E = basis.E if isinstance(basis, FamilyBasis) else np.asarray(basis, dtype=float)
    phi0 = np.vstack([np.zeros((N_STATE, E.shape[1])), E])
    floor = opts.regularity_floor if regularity_floor is None else regularity_floor
    return propagate(x0, p0, t_f, engine, lam=lam, chart=chart, opts=opts, variations=phi0,
                     jump=_jump_hook(chart, floor))


# --- determinant trace ------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _batched_field(chart):
    return jax.jit(jax.vmap(lambda z, par, br: _field(chart, z, par, br), in_axes=(0, None, None)))


def _state_matrix(xdot, X):
    """``[xdot | X]``, completed with ``e_m`` for the reduced family."""
    M = np.concatenate([xdot[..., :, None], X], axis=-1)
    if M.shape[-1] == N_STATE - 1:
        em = np.zeros(M.shape[:-1] + (1,))
        em[..., N_STATE - 1, 0] = 1.0
        M = np.concatenate([M, em], axis=-1)
    return M


def determinant_resolution(M: np.ndarray) -> np.ndarray:
    """``1 / sum_ij |M_ij (M^-1)_ji|`` for a stack of square matrices.

    The sum is the first-order condition number of ``det M`` under
    componentwise relative perturbations of the entries, so the sign of the
    determinant is trustworthy when this value is well above the relative
    accuracy of the integrated entries.  It does not depend on row or column
    scaling; singular matrices give zero.
    """
    M = np.asarray(M, dtype=float)
    out = np.zeros(M.shape[:-2])
    flat_m = M.reshape(-1, *M.shape[-2:])
    flat = out.reshape(-1)
    for i, m in enumerate(flat_m):
        if not np.all(np.isfinite(m)):
            continue
        try:
            inv = np.linalg.inv(m)
        except np.linalg.LinAlgError:
            continue
        kappa = float(np.sum(np.abs(m * inv.T)))
        flat[i] = 1.0 / kappa if np.isfinite(kappa) and kappa > 0.0 else 0.0
    return flat.reshape(out.shape)


def _dets(chart, ys, par, branch, ncols):
    """Family determinant and its resolution for a batch of samples."""
    zs = pad_pow2(ys[:, :NZ])
    xdot = np.asarray(_batched_field(chart)(zs, par, branch))[: len(ys), :N_STATE]
    X = ys[:, NZ:].reshape(len(ys), NZ, ncols)[:, :N_STATE, :]
    M = _state_matrix(xdot, X)
    return np.linalg.det(M), determinant_resolution(M)


@dataclass
class DeltaArc:
    index: int
    branch: int
    t: np.ndarray
    delta: np.ndarray
    resolution: np.ndarray
    z: np.ndarray | None = field(default=None, repr=False)

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.delta))) if self.delta.size else 0.0


@dataclass
class SwitchingDelta:
    t: float
    minus: float
    plus: float
    delta_rho: float
    minus_resolution: float = 1.0
    plus_resolution: float = 1.0

    @property
    def product(self) -> float:
        return self.minus * self.plus


@dataclass
class DeltaTrace:
    arcs: list
    switchings: list
    t_f: float
    delta_f: float
    evaluator: object = field(default=None, repr=False)

    def concatenated(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.concatenate([a.t for a in self.arcs])
        d = np.concatenate([a.delta for a in self.arcs])
        return t, d

    def scaled(self, exponent: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """``sgn(delta) |delta|**exponent`` (for plotting only)."""
        t, d = self.concatenated()
        return t, root_scaled(d, exponent)


def root_scaled(delta, exponent: float = 0.1):
    delta = np.asarray(delta, dtype=float)
    return np.sign(delta) * np.abs(delta) ** exponent


def delta_trace(traj: ExtremalTrajectory, samples_per_arc: int = 400) -> DeltaTrace:
    """Sample ``delta`` on every arc; arc endpoints are exact one-sided limits."""
    if traj.nvar not in (N_FAMILY, N_FAMILY - 1):
        raise ValueError("trajectory must carry 7 x 6 (or reduced 7 x 5) family variations")
    arcs = []
    for i, arc in enumerate(traj.arcs):
        ts, ys = traj.sample_arc(i, max(samples_per_arc, 2))
        d, res = _dets(traj.chart, ys, traj.par, arc.branch, traj.nvar)
        arcs.append(DeltaArc(i, arc.branch, ts, d, res, ys[:, :NZ].copy()))
    sw = []
    for i, ev in enumerate(traj.events):
        if i + 1 < len(arcs):
            a, b = arcs[i], arcs[i + 1]
            sw.append(SwitchingDelta(ev.t, float(a.delta[-1]), float(b.delta[0]), ev.delta_rho,
                                     float(a.resolution[-1]), float(b.resolution[0])))

    def evaluator(t, side="right"):
        idx = traj._locate(t, side)
        y = traj.evaluate(t, side)[None, :]
        return float(_dets(traj.chart, y, traj.par, traj.arcs[idx].branch, traj.nvar)[0][0])

    return DeltaTrace(arcs, sw, traj.t_f, float(arcs[-1].delta[-1]), evaluator)


# --- conditions --------------------------------------------------------------


@dataclass
class Condition1Result:
    passed: bool
    zeros: list
    dips: list
    final_ok: bool
    singular_arcs: list
    arcs_checked: list
    initial_layer: float = 0.0
    unresolved: list = field(default_factory=list)


@dataclass
class SwitchingVerdict:
    index: int
    t: float
    minus: float
    plus: float
    product: float
    status: str


@dataclass
class Condition2Result:
    passed: bool
    switchings: list

    @property
    def negative(self) -> list:
        return [s for s in self.switchings if s.status == "negative"]

    @property
    def indeterminate(self) -> list:
        return [s for s in self.switchings if s.status == "indeterminate"]


@dataclass
class Condition3Result:
    passed: bool
    matrix: np.ndarray
    eigenvalues: np.ndarray
    vacuous: bool
    multipliers: np.ndarray
    riccati: np.ndarray | None


def singular_arcs(tr: DeltaTrace, floor: float = 1e-10) -> list:
    """Arcs on which ``[xdot | X]`` is numerically singular at every sample.

    Decided on :func:`determinant_resolution`, which does not depend on how
    the family columns or the coordinates are scaled.
    """
    return [a.index for a in tr.arcs if a.resolution.size and float(np.max(a.resolution)) < floor]


def _refine_zero(tr, arc, k):
    a, b = arc.t[k], arc.t[k + 1]
    if tr.evaluator is not None:
        try:
            return brentq(lambda s: tr.evaluator(s), a, b, xtol=1e-12)
        except ValueError:
            pass
    da, db = arc.delta[k], arc.delta[k + 1]
    return float(a - da * (b - a) / (db - da))


def _dips(arc, thr):
    """Interior local minima of ``|delta|`` at or below ``thr``."""
    m = np.abs(arc.delta)
    if m.size < 3:
        return []
    k = np.nonzero((m[1:-1] <= m[:-2]) & (m[1:-1] <= m[2:]) & (m[1:-1] <= thr))[0] + 1
    return [float(arc.t[i]) for i in k]


def check_condition1(tr: DeltaTrace, rel_threshold: float = 1e-8, resolution_floor: float = 1e-10,
                     allow_initial_layer: bool = True) -> Condition1Result:
    """No zero of ``delta`` on any open arc and ``delta(t_f) != 0``.

    A zero is a sign change between samples (refined by bracketing) or an
    interior local minimum of ``|delta|`` below ``rel_threshold`` times the
    arc maximum.  Only samples with resolution at least ``resolution_floor``
    carry a meaningful sign.  Since ``X(0) = 0`` the leading samples of the
    first arc may be unresolved (``initial_layer`` is where that ends);
    unresolved samples anywhere else, and fully singular arcs, fail.
    """
    sing = singular_arcs(tr, resolution_floor)
    zeros, dips, checked, unresolved = [], [], [], []
    layer = tr.arcs[0].t[0] if tr.arcs else 0.0
    for arc in tr.arcs:
        if arc.index in sing:
            continue
        checked.append(arc.index)
        ok = arc.resolution >= resolution_floor
        lead = 0
        if allow_initial_layer and arc.index == 0:
            lead = int(np.argmax(ok))
            layer = float(arc.t[lead])
        bad = np.nonzero(~ok[lead:])[0] + lead
        bad = bad[(bad > 0) & (bad < arc.t.size - 1)]
        unresolved.extend(float(arc.t[k]) for k in bad)
        inner = np.arange(max(lead, 1), arc.t.size - 1)
        inner = inner[ok[inner]]
        if inner.size == 0:
            continue
        s = np.sign(arc.delta[inner])
        zeros.extend(float(arc.t[k]) for k in inner[s == 0.0])
        for j in np.nonzero(s[:-1] * s[1:] < 0)[0]:
            a, b = inner[j], inner[j + 1]
            if b == a + 1:
                zeros.append(_refine_zero(tr, arc, a))
            else:
                zeros.append(float(arc.t[a]))
        masked = DeltaArc(arc.index, arc.branch, arc.t[inner], arc.delta[inner], arc.resolution[inner])
        dips.extend(_dips(masked, rel_threshold * arc.scale))
    last = tr.arcs[-1]
    final_ok = (last.index not in sing and last.scale > 0.0 and last.resolution[-1] >= resolution_floor
                and abs(tr.delta_f) > rel_threshold * last.scale)
    passed = not zeros and not dips and not sing and not unresolved and final_ok
    return Condition1Result(passed, sorted(zeros), dips, final_ok, sing, checked, layer, unresolved)


def check_condition2(tr: DeltaTrace, rel_threshold: float = 1e-8, resolution_floor: float = 1e-10) -> Condition2Result:
    """Sign of ``delta(t_i-) delta(t_i+)`` at each switching.

    A one-sided value below the zero threshold of its arc, with resolution
    below ``resolution_floor``, or on a numerically singular arc makes
    the test indeterminate at that switching.
    """
    sing = set(singular_arcs(tr, resolution_floor))
    out = []
    for i, s in enumerate(tr.switchings):
        before, after = tr.arcs[i], tr.arcs[i + 1]
        small = (abs(s.minus) <= rel_threshold * before.scale or abs(s.plus) <= rel_threshold * after.scale
                 or s.minus_resolution < resolution_floor or s.plus_resolution < resolution_floor
                 or i in sing or i + 1 in sing)
        if small:
            status = "indeterminate"
        elif s.product > 0.0:
            status = "positive"
        else:
            status = "negative"
        out.append(SwitchingVerdict(i + 1, s.t, s.minus, s.plus, s.product, status))
    passed = all(v.status == "positive" for v in out)
    return Condition2Result(passed, out)


def compute_multipliers(x_f, p_f, mfd: TargetManifold) -> np.ndarray:
    """``nu = p_f grad_phi^T (grad_phi grad_phi^T)^-1``."""
    g = np.atleast_2d(mfd.grad(np.asarray(x_f, dtype=float)))
    if np.linalg.matrix_rank(g) < mfd.s:
        raise ManifoldDegeneracyError("constraint gradient is rank deficient at the final point")
    return np.linalg.solve(g @ g.T, g @ np.asarray(p_f, dtype=float))


def final_matrices(traj: ExtremalTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """``[xdot | X]`` and ``[pdot | P]`` at the final time.

    For the reduced family the first matrix is completed with ``e_m``.
    """
    y = traj.final()
    z = y[:NZ]
    phi = traj.variations(y)
    zdot = np.asarray(kernels(traj.chart).field(z, traj.par, traj.arcs[-1].branch))
    gx = _state_matrix(zdot[:N_STATE], phi[:N_STATE])
    gp = np.column_stack([zdot[N_STATE:], phi[N_STATE:]])
    return gx, gp


def projected_form(riccati: np.ndarray, tangent: np.ndarray, nu: np.ndarray, hessians: np.ndarray) -> np.ndarray:
    """``T^T (R - sum_k nu_k Hess phi_k) T`` with ``R = [pdot | P][xdot | X]^-1``."""
    return tangent.T @ (riccati - np.tensordot(nu, hessians, axes=1)) @ tangent


def check_condition3(traj: ExtremalTrajectory, mfd: TargetManifold, eig_floor: float = 1e-10,
                     cond_limit: float = 1e14) -> Condition3Result:
    """Positive definiteness of the tangent-projected final-manifold matrix.

    On the reduced family the final mass is the quantity being optimized,
    not a free coordinate; only targets that fix all six orbital
    coordinates (or the full state) are supported and the test is vacuous.
    """
    y = traj.final()
    x_f, p_f = y[:N_STATE], y[N_STATE:NZ]
    nu = compute_multipliers(x_f, p_f, mfd)
    if traj.nvar == N_FAMILY - 1:
        g = np.atleast_2d(mfd.grad(x_f))
        fixes_orbit = np.linalg.matrix_rank(g[:, :N_STATE - 1]) == N_STATE - 1
        if not fixes_orbit or (mfd.s < N_STATE and np.any(g[:, N_STATE - 1] != 0.0)):
            raise PreconditionError("the reduced family supports targets fixing the six orbital coordinates only")
        return Condition3Result(True, np.zeros((0, 0)), np.zeros(0), True, nu, None)
    gx, gp = final_matrices(traj)
    if not np.all(np.isfinite(gx)) or np.linalg.cond(gx) > cond_limit:
        raise PreconditionError("[xdot | X] is singular at the final time")
    riccati = gp @ np.linalg.inv(gx)
    t = tangent_basis(mfd, x_f)
    if t.shape[1] == 0:
        return Condition3Result(True, np.zeros((0, 0)), np.zeros(0), True, nu, riccati)
    m = projected_form(riccati, t, nu, np.asarray(mfd.hessians(x_f)))
    sym = 0.5 * (m + m.T)
    ev = np.linalg.eigvalsh(sym)
    scale = max(np.abs(np.trace(sym)), np.max(np.abs(ev)), 1e-300)
    return Condition3Result(bool(np.all(ev > eig_floor * scale)), m, ev, False, nu, riccati)


def gauge_residual(traj: ExtremalTrajectory, basis: FamilyBasis, engine: EngineSpec, p0) -> float:
    """``|X(t_f) v| / |X(t_f)|`` for the unit family direction ``v`` along the gauge generator."""
    v = basis.E.T @ gauge_generator(p0, engine)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return math.inf
    X = traj.variations(traj.final())[:N_STATE]
    nx = np.linalg.norm(X, 2)
    return float(np.linalg.norm(X @ (v / nv)) / nx) if nx > 0.0 else 0.0


# --- full costate sensitivity -------------------------------------------------


def costate_sensitivity_trace(x0, p0, t_f, engine, lam=1.0, chart=MEOE, opts=None,
                              samples_per_arc: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """``det[dx/dp0]`` for unrestricted 7 x 7 costate variations (``P(0) = I``)."""
    chart = _resolve(chart)
    phi0 = np.vstack([np.zeros((N_STATE, N_STATE)), np.eye(N_STATE)])
    traj = propagate(x0, p0, t_f, engine, lam=lam, chart=chart, opts=opts, variations=phi0,
                     jump=_jump_hook(chart, (opts or FlowOptions()).regularity_floor))
    ts, ds = [], []
    for i in range(len(traj.arcs)):
        t, ys = traj.sample_arc(i, samples_per_arc)
        X = ys[:, NZ:].reshape(len(ys), NZ, N_STATE)[:, :N_STATE, :]
        ts.append(t)
        ds.append(np.linalg.det(X))
    return np.concatenate(ts), np.concatenate(ds)


# --- driver -------------------------------------------------------------------


@dataclass
class AssumptionReport:
    regular_hamiltonian: bool
    regular_switchings: bool
    min_grad_norm: float
    min_h1_dot: float
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.regular_hamiltonian and self.regular_switchings


@dataclass
class ExtensionReport:
    t_end: float
    trace: DeltaTrace
    switchings: list
    zeros: list
    conjugate_time: float | None
    stopped: str = ""


@dataclass
class SufficiencyReport:
    assumptions: AssumptionReport
    condition1: Condition1Result | None
    condition2: Condition2Result | None
    condition3: Condition3Result | None
    trace: DeltaTrace | None
    basis: FamilyBasis | None
    extension: ExtensionReport | None = None
    family: str = "full"
    gauge_residual: float = math.nan
    notes: list = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return bool(
            self.assumptions.passed
            and self.condition1 is not None and self.condition1.passed
            and self.condition2 is not None and self.condition2.passed
            and self.condition3 is not None and self.condition3.passed
        )

    @property
    def degenerate_family(self) -> bool:
        """The state trajectory does not depend on one family direction."""
        return bool(self.gauge_residual < 1e-8)

    @property
    def failure_class(self) -> str | None:
        if not self.assumptions.passed:
            return "assumption"
        if self.overall:
            return None
        if self.degenerate_family:
            return "degenerate_family"
        return "condition"


def check_assumptions(traj: ExtremalTrajectory, floor: float = 1e-8) -> AssumptionReport:
    """Regular Hamiltonian and regular switchings along the extremal.

    The gradient test is made in Cartesian coordinates: in the element chart
    ``dH/dx`` vanishes on every coast arc (``H = p_l ldot = 0`` forces
    ``p_l = 0``), an artefact of the coordinates rather than of the extremal.
    """
    kc = kernels(CARTESIAN)
    gmin = math.inf
    for _, z, br in traj.nodes():
        zc = z if traj.chart == CARTESIAN else meoe_phase_to_cartesian(z)
        f = np.asarray(kc.field(zc, traj.par, br))
        gmin = min(gmin, float(np.linalg.norm(f[:N_STATE])), float(np.linalg.norm(f[N_STATE:])))
    hmin = min((abs(e.h1_dot) for e in traj.events), default=math.inf)
    reg_h = gmin > floor
    reg_s = hmin > floor
    msg = []
    if not reg_h:
        msg.append(f"Hamiltonian gradient vanishes (min norm {gmin:.3e})")
    if not reg_s:
        msg.append(f"non-regular switching (min |dH1/dt| {hmin:.3e})")
    return AssumptionReport(reg_h, reg_s, gmin, hmin, "; ".join(msg))


def run_sufficiency(x0, p0, t_f: float, engine: EngineSpec, mfd: TargetManifold, chart=MEOE,
                    opts: FlowOptions | None = None, extend_to: float | None = None,
                    samples_per_arc: int = 400, rel_threshold: float = 1e-8,
                    eig_floor: float = 1e-10, family: str = "full",
                    resolution_floor: float = 1e-10) -> SufficiencyReport:
    """Check both assumptions and the three conditions on ``[0, t_f]``.

    ``family="full"`` uses the 6-parameter family (complement of ``xdot(0)``);
    ``family="reduced"`` also removes the gauge direction.  With
    ``extend_to > t_f`` the family is continued and the first switching with
    a negative product (or interior zero of ``delta``) beyond ``t_f`` is
    reported as the conjugate time.
    """
    if family not in ("full", "reduced"):
        raise ValueError(f"family must be 'full' or 'reduced', got {family!r}")
    chart = _resolve(chart)
    opts = opts or FlowOptions()
    reduced = family == "reduced"
    try:
        basis = build_family_basis(x0, p0, engine, 1.0, chart, floor=opts.regularity_floor, reduced=reduced)
    except RegularHamiltonianError as exc:
        return SufficiencyReport(AssumptionReport(False, True, 0.0, math.inf, str(exc)), None, None, None, None, None,
                                 family=family)
    try:
        traj = propagate_family(x0, p0, t_f, engine, basis, 1.0, chart, opts)
    except (RegularityError, RegularSwitchingError) as exc:
        return SufficiencyReport(AssumptionReport(True, False, math.nan, 0.0, str(exc)), None, None, None, None, basis,
                                 family=family)
    assumptions = check_assumptions(traj, opts.regularity_floor)
    tr = delta_trace(traj, samples_per_arc)
    c1 = check_condition1(tr, rel_threshold, resolution_floor)
    c2 = check_condition2(tr, rel_threshold, resolution_floor)
    notes = []
    try:
        c3 = check_condition3(traj, mfd, eig_floor)
    except PreconditionError as exc:
        c3 = None
        notes.append(f"condition 3 not evaluated: {exc}")
    gres = math.nan if reduced else gauge_residual(traj, basis, engine, p0)
    if not reduced and gres < 1e-8:
        notes.append(f"the state does not depend on the gauge direction (residual {gres:.1e}); "
                     "det[xdot | X] vanishes identically, use the reduced family")
    ext = None
    if extend_to is not None and extend_to > t_f:
        ext = _extend(traj, engine, chart, opts, extend_to, samples_per_arc, rel_threshold, resolution_floor)
    return SufficiencyReport(assumptions, c1, c2, c3, tr, basis, ext, family, gres, notes)


def _extend(traj, engine, chart, opts, t_end, samples_per_arc, rel_threshold, resolution_floor):
    y = traj.final()
    z = y[:NZ]
    phi = traj.variations(y)

    def run(t1):
        return propagate(
            z[:N_STATE], z[N_STATE:], t1, engine, lam=1.0, chart=chart, opts=opts, variations=phi,
            t0=traj.t_f, branch0=traj.arcs[-1].branch, jump=_jump_hook(chart, opts.regularity_floor),
        )

    stopped = ""
    try:
        tail = run(t_end)
    except PropagationError as exc:
        # keep the part of the extension that propagated
        if exc.t is None or not exc.t > traj.t_f:
            raise
        stopped = str(exc)
        t_end = exc.t
        tail = run(t_end)
    tr = delta_trace(tail, samples_per_arc)
    c1 = check_condition1(tr, rel_threshold, resolution_floor, allow_initial_layer=False)
    c2 = check_condition2(tr, rel_threshold, resolution_floor)
    candidates = list(c1.zeros) + [s.t for s in c2.negative]
    return ExtensionReport(t_end, tr, c2.switchings, c1.zeros, min(candidates) if candidates else None, stopped)
