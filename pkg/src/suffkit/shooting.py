"""Single shooting for the free-time transfer with homotopy on the running cost.

Unknowns are ``(p0, t_f)``.  The eight equations are the target constraints
``phi(x(t_f)) = 0``, the projection of ``p(t_f)`` on the tangent basis of the
target manifold (which removes the multipliers) and ``H(t_f) = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from suffkit.dynamics import N_STATE, DynamicsError, MEOE, _resolve, kernels, select_branch
from suffkit.flow import ExtremalTrajectory, FlowOptions, propagate
from suffkit.integrate import NZ
from suffkit.manifold import TargetManifold, tangent_basis
from suffkit.units import EngineSpec

log = logging.getLogger(__name__)


class ShootingError(RuntimeError):
    pass


class DivergedError(ShootingError):
    """Newton iterations failed; ``best`` holds the best iterate found."""

    def __init__(self, message: str, best: "ShootingUnknowns | None" = None, residual_norm: float = math.inf):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm


class ContinuationStuckError(ShootingError):
    """The homotopy step underflowed; ``trace`` lists the parameters reached."""

    def __init__(self, message: str, trace: list, last: "ExtremalSolution | None" = None):
        super().__init__(message)
        self.trace = trace
        self.last = last


@dataclass(frozen=True)
class ShootingUnknowns:
    p0: np.ndarray
    t_f: float

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float).copy()
        if p0.shape != (N_STATE,):
            raise ValueError("initial costate must have 7 components")
        object.__setattr__(self, "p0", p0)
        if not self.t_f > 0:
            raise ValueError(f"final time must be positive, got {self.t_f}")

    def as_vector(self) -> np.ndarray:
        return np.append(self.p0, self.t_f)

    @classmethod
    def from_vector(cls, u) -> "ShootingUnknowns":
        u = np.asarray(u, dtype=float)
        return cls(u[:N_STATE], float(u[N_STATE]))


@dataclass(frozen=True)
class ShootingResidual:
    manifold: np.ndarray
    transversality: np.ndarray
    hamiltonian: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.manifold, self.transversality, [self.hamiltonian]])

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.as_vector())))


@dataclass(frozen=True)
class ShootingProblem:
    x0: np.ndarray
    engine: EngineSpec
    manifold: TargetManifold
    chart: object = MEOE
    flow: FlowOptions = field(default_factory=FlowOptions)
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).copy())
        object.__setattr__(self, "chart", _resolve(self.chart))
        if self.manifold.chart != self.chart.name:
            raise ValueError(f"manifold chart {self.manifold.chart!r} differs from {self.chart.name!r}")

    def propagate(self, u: ShootingUnknowns, lam: float, variations=None) -> ExtremalTrajectory:
        return propagate(
            self.x0, u.p0, u.t_f, self.engine, lam=lam, chart=self.chart, opts=self.flow,
            variations=variations, t0=self.t0,
        )


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 30
    jacobian: str = "fd"
    fd_step: float = 1e-7
    min_damping: float = 1.0 / 1024.0
    max_tf_change: float = 0.2


@dataclass
class ExtremalSolution:
    unknowns: ShootingUnknowns
    lam: float
    trajectory: ExtremalTrajectory
    residual: ShootingResidual
    multipliers: np.ndarray
    iterations: int = 0

    @property
    def residual_norm(self) -> float:
        return self.residual.norm

    @property
    def t_f(self) -> float:
        return self.unknowns.t_f

    @property
    def p0(self) -> np.ndarray:
        return self.unknowns.p0


def multipliers(grad_phi: np.ndarray, p_f: np.ndarray) -> np.ndarray:
    """Least-squares ``nu`` with ``nu grad_phi = p_f``."""
    g = np.atleast_2d(grad_phi)
    return np.linalg.solve(g @ g.T, g @ p_f)


def _residual_from(problem: ShootingProblem, traj: ExtremalTrajectory) -> ShootingResidual:
    z = traj.final()[:NZ]
    x_f, p_f = z[:N_STATE], z[N_STATE:]
    mfd = problem.manifold
    t = tangent_basis(mfd, x_f)
    k = kernels(problem.chart)
    eff = float(k.efficiency(z, traj.par))
    h = float(k.hamiltonian(z, traj.par, select_branch(eff, traj.lam)))
    return ShootingResidual(np.asarray(mfd.phi(x_f), dtype=float), t.T @ p_f, h)


def residual(u: ShootingUnknowns, problem: ShootingProblem, lam: float = 1.0) -> ShootingResidual:
    """Shooting residual; propagation failures are raised unchanged."""
    return _residual_from(problem, problem.propagate(u, lam))


def _jacobian_fd(problem, u, lam, step):
    v = u.as_vector()
    cols = []
    for i in range(v.size):
        h = step * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        rp = residual(ShootingUnknowns.from_vector(vp), problem, lam).as_vector()
        rm = residual(ShootingUnknowns.from_vector(vm), problem, lam).as_vector()
        cols.append((rp - rm) / (2.0 * h))
    return np.column_stack(cols)


def _jacobian_variational(problem, u, lam):
    """Jacobian and residual from one propagation with the 14 x 7 costate sensitivities."""
    phi0 = np.vstack([np.zeros((N_STATE, N_STATE)), np.eye(N_STATE)])
    traj = problem.propagate(u, lam, variations=phi0)
    res = _residual_from(problem, traj)
    y = traj.final()
    z = y[:NZ]
    phi = traj.variations(y)
    x_f = z[:N_STATE]
    k = kernels(problem.chart)
    par = traj.par
    br = traj.arcs[-1].branch
    zdot = np.asarray(k.field(z, par, br))
    g = np.atleast_2d(problem.manifold.grad(x_f))
    t = tangent_basis(problem.manifold, x_f)
    dx, dp = phi[:N_STATE], phi[N_STATE:]
    z0 = traj.initial()[:NZ]
    h_p0 = np.asarray(k.field(z0, par, traj.arcs[0].branch))[:N_STATE]
    jac = np.vstack(
        [
            np.hstack([g @ dx, (g @ zdot[:N_STATE])[:, None]]),
            np.hstack([t.T @ dp, (t.T @ zdot[N_STATE:])[:, None]]),
            np.append(h_p0, 0.0)[None, :],
        ]
    )
    return jac, res, traj


def shooting_jacobian(problem: ShootingProblem, u: ShootingUnknowns, lam: float = 1.0,
                      method: str = "fd", step: float = 1e-7) -> np.ndarray:
    if method == "fd":
        return _jacobian_fd(problem, u, lam, step)
    if method == "variational":
        return _jacobian_variational(problem, u, lam)[0]
    raise ValueError(f"unknown Jacobian method {method!r}")


def _finish(problem, u, lam, traj, res, iterations) -> ExtremalSolution:
    x_f = traj.final()[:N_STATE]
    p_f = traj.final()[N_STATE:NZ]
    nu = multipliers(problem.manifold.grad(x_f), p_f)
    return ExtremalSolution(u, lam, traj, res, nu, iterations)


def solve(guess: ShootingUnknowns, lam: float, problem: ShootingProblem,
          opts: SolverOptions | None = None) -> ExtremalSolution:
    """Damped Newton on the shooting residual."""
    opts = opts or SolverOptions()
    u = guess
    try:
        traj = problem.propagate(u, lam)
    except DynamicsError as exc:
        raise DivergedError(f"initial guess does not propagate: {exc}", guess) from exc
    res = _residual_from(problem, traj)
    r = res.as_vector()
    best, best_norm = u, res.norm
    for it in range(opts.max_iter + 1):
        log.debug("lam=%.6g iter=%d |R|=%.3e t_f=%.9g", lam, it, res.norm, u.t_f)
        if res.norm < opts.tol:
            return _finish(problem, u, lam, traj, res, it)
        if it == opts.max_iter:
            break
        try:
            if opts.jacobian == "variational":
                jac = _jacobian_variational(problem, u, lam)[0]
            else:
                jac = _jacobian_fd(problem, u, lam, opts.fd_step)
        except DynamicsError as exc:
            raise DivergedError(f"Jacobian evaluation failed: {exc}", best, best_norm) from exc
        du = np.linalg.lstsq(jac, -r, rcond=None)[0]
        if abs(du[-1]) > opts.max_tf_change * u.t_f:
            du *= opts.max_tf_change * u.t_f / abs(du[-1])
        alpha = 1.0
        f0 = float(r @ r)
        accepted = False
        while alpha >= opts.min_damping:
            try:
                trial = ShootingUnknowns.from_vector(u.as_vector() + alpha * du)
                traj_t = problem.propagate(trial, lam)
                res_t = _residual_from(problem, traj_t)
            except (DynamicsError, ValueError):
                alpha *= 0.5
                continue
            rt = res_t.as_vector()
            if float(rt @ rt) <= (1.0 - 1e-4 * alpha) * f0 or res_t.norm < opts.tol:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise DivergedError(f"line search failed at iteration {it} (|R| = {res.norm:.3e})", best, best_norm)
        u, traj, res, r = trial, traj_t, res_t, rt
        if res.norm < best_norm:
            best, best_norm = u, res.norm
    raise DivergedError(f"no convergence in {opts.max_iter} iterations (|R| = {best_norm:.3e})", best, best_norm)


def continue_homotopy(guess: ShootingUnknowns, schedule, problem: ShootingProblem,
                      opts: SolverOptions | None = None, min_step: float = 1e-6,
                      max_step: float | None = None) -> ExtremalSolution:
    """Track the solution from ``schedule[0]`` to ``schedule[-1]``.

    Each target value of the schedule is approached with an adaptive step that
    is halved on failure and grown on easy success; the predictor is a secant
    extrapolation through the last two solutions.
    """
    schedule = [float(v) for v in schedule]
    if not schedule:
        raise ValueError("empty homotopy schedule")
    if any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("homotopy schedule must be non-decreasing")
    trace: list[float] = []
    try:
        sol = solve(guess, schedule[0], problem, opts)
    except (DivergedError, DynamicsError) as exc:
        raise ContinuationStuckError(f"no solution at the first parameter: {exc}", trace) from exc
    trace.append(sol.lam)
    history = [(sol.lam, sol.unknowns.as_vector())]
    for target in schedule[1:]:
        step = target - sol.lam
        if max_step is not None:
            step = min(step, max_step)
        while sol.lam < target:
            trial_lam = min(sol.lam + step, target)
            pred = history[-1][1]
            if len(history) >= 2:
                (l1, v1), (l2, v2) = history[-2], history[-1]
                if l2 > l1:
                    pred = v2 + (v2 - v1) * (trial_lam - l2) / (l2 - l1)
            try:
                cand = ShootingUnknowns.from_vector(pred)
                new = solve(cand, trial_lam, problem, opts)
            except (DivergedError, DynamicsError, ValueError) as exc:
                if len(history) >= 2 and not np.array_equal(pred, history[-1][1]):
                    try:
                        new = solve(ShootingUnknowns.from_vector(history[-1][1]), trial_lam, problem, opts)
                    except (DivergedError, DynamicsError, ValueError):
                        new = None
                else:
                    new = None
                if new is None:
                    step *= 0.5
                    log.info("homotopy step halved to %.3e at lam=%.9g (%s)", step, sol.lam, exc)
                    if step < min_step:
                        raise ContinuationStuckError(
                            f"homotopy step underflow at lam = {sol.lam}", trace, sol
                        ) from exc
                    continue
            sol = new
            trace.append(sol.lam)
            history.append((sol.lam, sol.unknowns.as_vector()))
            log.info("lam=%.9g t_f=%.9g iters=%d", sol.lam, sol.t_f, sol.iterations)
            if sol.iterations <= 3:
                step *= 2.0
            if max_step is not None:
                step = min(step, max_step)
    return sol


def estimate_final_time(x0, l_f: float, P_f: float) -> float:
    """Revolutions times the mean of the initial and final periods."""
    x0 = np.asarray(x0, dtype=float)
    e2 = x0[1] ** 2 + x0[2] ** 2
    a0 = x0[0] / (1.0 - e2)
    period = 0.5 * (2.0 * np.pi * a0**1.5 + 2.0 * np.pi * P_f**1.5)
    return float((l_f - x0[5]) / (2.0 * np.pi) * period)


def _fixed_time_residual(problem, t_f, lam):
    def fun(p0):
        try:
            traj = problem.propagate(ShootingUnknowns(p0, t_f), lam)
        except (DynamicsError, ValueError):
            return np.full(N_STATE, 1e3)
        res = _residual_from(problem, traj)
        return np.concatenate([res.manifold, res.transversality])

    return fun


def initial_guess(problem: ShootingProblem, t_f: float, lam: float = 0.0, n_starts: int = 16,
                  seed: int = 0, scale: float = 1.0, tol: float = 1e-10) -> ShootingUnknowns:
    """Costate for the fixed-time smoothed problem, found by multi-start Levenberg-Marquardt.

    The free-time solve is started from the returned costate and ``t_f``.
    """
    rng = np.random.default_rng(seed)
    fun = _fixed_time_residual(problem, t_f, lam)
    best = None
    for k in range(n_starts):
        p0 = scale * rng.standard_normal(N_STATE)
        p0[6] = abs(p0[6]) * 0.1
        try:
            out = least_squares(fun, p0, method="lm", xtol=1e-14, ftol=1e-14, max_nfev=400)
        except (DynamicsError, ValueError):
            continue
        cost = float(np.max(np.abs(out.fun)))
        log.info("start %d: |R| = %.3e", k, cost)
        if best is None or cost < best[0]:
            best = (cost, out.x)
        if cost < tol:
            break
    if best is None:
        raise DivergedError("no start propagated")
    return ShootingUnknowns(best[1], t_f)


def with_flow(problem: ShootingProblem, **kw) -> ShootingProblem:
    return replace(problem, flow=replace(problem.flow, **kw))
