"""Propagation of the state-costate system with switching detection.

The control branch (coast, smooth, burn) is frozen between events.  Whenever
the end of an accepted step lies outside the region of the current branch,
the crossing is located by a safeguarded regula falsi on the step length, the
step is retaken to land on the switching surface and integration restarts on
the new branch.  Variational matrices, when requested, are carried along and
updated at every switching with the jump

    Phi+ = Phi- + (F+ - F-) (dS . Phi-) / (dS . F-)

where ``S = p.f1`` and ``F`` is the Hamiltonian vector field.  For the
bang-bang branch change this is exactly the classical update of dx/dq and
dp/dq with the switching-time gradient; across the kinks of the smoothed
problem ``F+ = F-`` and nothing jumps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from suffkit.dynamics import (
    BURN,
    COAST,
    N_STATE,
    SMOOTH,
    Chart,
    DryMassError,
    DynamicsError,
    MEOE,
    SingularityError,
    _resolve,
    branch_margin,
    engine_par,
    kernels,
    select_branch,
)
from suffkit.integrate import ERROR_EXPONENT, NZ, stepper
from suffkit.units import EngineSpec

log = logging.getLogger(__name__)


class PropagationError(DynamicsError):
    """Propagation failure; ``t`` is the last time reached, when known."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class FuelExhaustedError(DryMassError, PropagationError):
    pass


class CollisionError(SingularityError, PropagationError):
    pass


class RegularityError(PropagationError):
    """A switching with vanishing time derivative of the switching function."""


class SingularArcError(PropagationError):
    """Switching function vanishing on an interval (chattering or singular arc)."""


@dataclass(frozen=True)
class FlowOptions:
    rtol: float = 1e-12
    atol: float = 1e-12
    event_tol: float = 1e-10
    regularity_floor: float = 1e-8
    r_floor: float = 0.05
    h_init: float = 1e-3
    h_max: float = 1.0
    max_steps: int = 500_000
    min_event_gap: float = 1e-8
    root_xtol: float = 1e-14


@dataclass(frozen=True)
class SwitchingEvent:
    t: float
    branch_before: int
    branch_after: int
    delta_rho: float
    h1_dot: float
    z: np.ndarray
    y_minus: np.ndarray
    y_plus: np.ndarray

    @property
    def is_bang(self) -> bool:
        return self.delta_rho != 0.0


@dataclass
class Arc:
    branch: int
    t: list = field(default_factory=list)
    y: list = field(default_factory=list)
    f: list = field(default_factory=list)

    def freeze(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.f = np.asarray(self.f, dtype=float)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def label(self) -> str:
        return {COAST: "coast", SMOOTH: "smooth", BURN: "burn"}[self.branch]


@dataclass
class ExtremalTrajectory:
    chart: Chart
    par: np.ndarray
    nvar: int
    arcs: list
    events: list
    options: FlowOptions

    @property
    def lam(self) -> float:
        return float(self.par[2])

    @property
    def t0(self) -> float:
        return self.arcs[0].t_start

    @property
    def t_f(self) -> float:
        return self.arcs[-1].t_end

    @property
    def switching_times(self) -> np.ndarray:
        return np.array([e.t for e in self.events if e.is_bang])

    @property
    def burn_count(self) -> int:
        return sum(1 for a in self.arcs if a.branch == BURN and a.t_end > a.t_start)

    @property
    def labels(self) -> list:
        return [a.label for a in self.arcs]

    def final(self) -> np.ndarray:
        return self.arcs[-1].y[-1]

    def initial(self) -> np.ndarray:
        return self.arcs[0].y[0]

    def _locate(self, t: float, side: str = "right"):
        for i, arc in enumerate(self.arcs):
            last = i == len(self.arcs) - 1
            if arc.t_start <= t < arc.t_end or (t == arc.t_end and (side == "left" or last)):
                return i
        if t < self.t0 and self.t0 - t < 1e-12:
            return 0
        raise ValueError(f"time {t} outside [{self.t0}, {self.t_f}]")

    def evaluate(self, t: float, side: str = "right") -> np.ndarray:
        """Augmented solution at ``t``; ``side`` picks the one-sided limit at a switching."""
        arc = self.arcs[self._locate(t, side)]
        k = int(np.searchsorted(arc.t, t, side="right")) - 1
        k = min(max(k, 0), len(arc.t) - 1)
        tau = t - arc.t[k]
        if tau == 0.0:
            return arc.y[k].copy()
        st = stepper(self.chart, self.nvar)
        y, _ = st.advance(arc.y[k], arc.f[k], tau, self.par, arc.branch)
        return np.asarray(y)

    def sample_arc(self, index: int, n: int, include_ends: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """``n`` equispaced samples on arc ``index``; endpoints are the one-sided limits."""
        arc = self.arcs[index]
        ts = np.linspace(arc.t_start, arc.t_end, n)
        if not include_ends:
            ts = ts[1:-1]
        st = stepper(self.chart, self.nvar)
        ks = np.clip(np.searchsorted(arc.t, ts, side="right") - 1, 0, len(arc.t) - 1)
        out = np.empty((len(ts), arc.y.shape[1]))
        for j, (t, k) in enumerate(zip(ts, ks)):
            tau = t - arc.t[k]
            if tau == 0.0:
                out[j] = arc.y[k]
            else:
                out[j] = np.asarray(st.advance(arc.y[k], arc.f[k], tau, self.par, arc.branch)[0])
        return ts, out

    def nodes(self):
        """Iterate over ``(t, z, branch)`` of all stored step nodes."""
        for arc in self.arcs:
            for t, y in zip(arc.t, arc.y):
                yield t, y[:NZ], arc.branch

    def variations(self, y: np.ndarray) -> np.ndarray:
        return y[NZ:].reshape(NZ, self.nvar)


def pad_pow2(a: np.ndarray) -> np.ndarray:
    """Pad along axis 0 to a power-of-two length (bounds the number of compiled batch shapes)."""
    n = 1 << max(0, int(len(a) - 1).bit_length())
    if n == len(a):
        return a
    return np.concatenate([a, np.repeat(a[-1:], n - len(a), axis=0)])


def _exit(branch: int, eff: float, lam: float):
    """Boundary value and next branch if ``eff`` lies outside ``branch``'s region."""
    if lam >= 1.0:
        if branch == BURN and eff < 1.0:
            return 1.0, COAST
        if branch == COAST and eff > 1.0:
            return 1.0, BURN
        return None
    lo, hi = lam, 2.0 - lam
    if branch == COAST and eff > lo:
        return lo, SMOOTH
    if branch == SMOOTH:
        if eff < lo:
            return lo, COAST
        if eff > hi:
            return hi, BURN
    if branch == BURN and eff < hi:
        return hi, SMOOTH
    return None


def _throttle_of(branch: int, eff: float, lam: float) -> float:
    if branch == BURN:
        return 1.0
    if branch == COAST:
        return 0.0
    return min(max((eff - lam) / (2.0 * (1.0 - lam)), 0.0), 1.0)


def _start_branch(chart: Chart, z: np.ndarray, par: np.ndarray, opts: FlowOptions) -> int:
    lam = float(par[2])
    base = stepper(chart, 0)
    eff = float(base.efficiency(z, par))
    br = select_branch(eff, lam)
    if branch_margin(eff, lam) > opts.event_tol:
        return br
    # On a boundary: follow the direction in which S moves.
    grad = np.asarray(base.efficiency_grad(z, par))
    candidates = [COAST, BURN] if lam >= 1.0 else [COAST, SMOOTH, BURN]
    for cand in candidates:
        sdot = float(grad @ np.asarray(base.field(z, par, cand)))
        probe = eff + 1e3 * opts.event_tol * math.copysign(1.0, sdot)
        if select_branch(probe, lam) == cand:
            return cand
    return br


def propagate(
    x0,
    p0,
    t_f: float,
    engine: EngineSpec,
    lam: float = 1.0,
    chart=MEOE,
    opts: FlowOptions | None = None,
    variations: np.ndarray | None = None,
    t0: float = 0.0,
    branch0: int | None = None,
    jump=None,
) -> ExtremalTrajectory:
    """Integrate the extremal flow from ``(x0, p0)`` at ``t0`` to ``t_f``.

    ``variations`` is an optional 14 x k matrix of initial variations that is
    propagated with the linearized flow and the switching jumps.  ``jump``
    optionally replaces the generic jump update; it is called as
    ``jump(phi_minus, z, par, branch_before, branch_after, h1_dot)``.
    """
    chart = _resolve(chart)
    opts = opts or FlowOptions()
    if not t_f > t0:
        raise ValueError("final time must exceed initial time")
    par = engine_par(engine, lam)
    z0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(p0, dtype=float)])
    if z0.shape != (NZ,):
        raise ValueError("state and costate must be 7-vectors")
    if z0[6] < engine.m_c:
        raise FuelExhaustedError(f"initial mass {z0[6]} below dry mass")
    nvar = 0 if variations is None else int(np.shape(variations)[1])
    st = stepper(chart, nvar)
    base = stepper(chart, 0)
    y = z0 if nvar == 0 else np.concatenate([z0, np.asarray(variations, dtype=float).ravel()])

    branch = branch0 if branch0 is not None else _start_branch(chart, z0, par, opts)
    f = np.asarray(st.rhs(y, par, branch))
    t = float(t0)
    h = opts.h_init
    arcs = [Arc(branch, [t], [y], [f])]
    events: list[SwitchingEvent] = []
    m_c = engine.m_c
    nsteps = 0
    while t_f - t > 1e-14 * max(1.0, abs(t_f)):
        nsteps += 1
        if nsteps > opts.max_steps:
            raise PropagationError(f"step budget exhausted at t = {t}", t=t)
        h = min(h, opts.h_max, t_f - t)
        y_new, f_new, err, eff_new, r_new = st.step(y, f, h, par, branch, opts.atol, opts.rtol)
        err = float(err)
        if not err <= 1.0:
            h *= 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err**ERROR_EXPONENT)
            if h < 1e-14:
                raise PropagationError(f"step size underflow at t = {t}", t=t)
            continue
        eff_new = float(eff_new)
        crossing = _exit(branch, eff_new, lam)
        if crossing is not None:
            bound, new_branch = crossing
            tau = _locate_crossing(
                base, y[:NZ], f[:NZ], h, par, branch, bound, min(opts.event_tol, opts.root_xtol * max(1.0, abs(t)))
            )
            y_e = np.asarray(st.advance(y, f, tau, par, branch)[0])
            t_e = t + tau
            if lam >= 1.0 and events and t_e - events[-1].t < opts.min_event_gap:
                raise SingularArcError(f"switching function vanishes near t = {t_e}", t=t_e)
            ev, y_plus = _switch(chart, st, base, y_e, t_e, par, branch, new_branch, nvar, opts, jump)
            f_e = np.asarray(st.rhs(y_e, par, branch))
            arcs[-1].t.append(t_e)
            arcs[-1].y.append(y_e)
            arcs[-1].f.append(f_e)
            events.append(ev)
            branch = new_branch
            y = y_plus
            f = np.asarray(st.rhs(y, par, branch))
            t = t_e
            arcs.append(Arc(branch, [t], [y], [f]))
            continue
        y = np.asarray(y_new)
        f = np.asarray(f_new)
        t = t + h
        arcs[-1].t.append(t)
        arcs[-1].y.append(y)
        arcs[-1].f.append(f)
        if y[6] < m_c:
            raise FuelExhaustedError(f"mass {y[6]:.6g} below dry mass at t = {t}", t=t - h)
        if not float(r_new) > opts.r_floor:
            raise CollisionError(f"radius {float(r_new):.6g} below floor at t = {t}", t=t - h)
        h *= min(10.0, max(0.2, 0.9 * max(err, 1e-300) ** ERROR_EXPONENT))
    for arc in arcs:
        arc.freeze()
    if len(arcs) > 1 and arcs[-1].t_end == arcs[-1].t_start:
        arcs.pop()
    return ExtremalTrajectory(chart, par, nvar, arcs, events, opts)


def _locate_crossing(base, z, fz, h, par, branch, bound, tol) -> float:
    """Step length landing on ``S = bound`` (Illinois regula falsi with bisection fallback).

    The returned length is on or just past the surface so that the next branch
    is consistent at the restart point.
    """
    _, eff_h = base.advance(z, fz, h, par, branch)
    gb = float(eff_h) - bound
    ga = float(base.efficiency(z, par)) - bound
    if ga * gb >= 0.0:
        # Restarting right on the surface: the left end counts as inside.
        ga = -math.copysign(max(abs(ga), 1e-300), gb)
    a, b = 0.0, h
    last = None
    width = b - a
    for it in range(200):
        if b - a <= tol:
            break
        c = (a * gb - b * ga) / (gb - ga)
        if it % 4 == 3 and (b - a) > 0.5 * width:
            c = 0.5 * (a + b)
        if it % 4 == 3:
            width = b - a
        if not a < c < b:
            c = 0.5 * (a + b)
        gc = float(base.advance(z, fz, c, par, branch)[1]) - bound
        if gc == 0.0:
            return c
        if gc * gb > 0.0:
            b, gb = c, gc
            if last == "b":
                ga *= 0.5
            last = "b"
        else:
            a, ga = c, gc
            if last == "a":
                gb *= 0.5
            last = "a"
    return b


def _switch(chart, st, base, y_e, t_e, par, old, new, nvar, opts, jump=None):
    z = y_e[:NZ]
    lam = float(par[2])
    grad = np.asarray(base.efficiency_grad(z, par))
    f_minus = np.asarray(base.field(z, par, old))
    f_plus = np.asarray(base.field(z, par, new))
    sdot = float(grad @ f_minus)
    if abs(sdot) < opts.regularity_floor:
        raise RegularityError(f"non-regular switching at t = {t_e}: dH1/dt = {sdot:.3e}", t=t_e)
    eff = float(base.efficiency(z, par))
    drho = _throttle_of(new, eff, lam) - _throttle_of(old, eff, lam) if lam >= 1.0 else 0.0
    y_plus = y_e.copy()
    if nvar:
        phi = y_e[NZ:].reshape(NZ, nvar)
        if jump is None:
            phi_plus = phi + np.outer(f_plus - f_minus, grad @ phi) / sdot
        else:
            phi_plus = jump(phi, z, par, old, new, sdot)
        y_plus[NZ:] = np.asarray(phi_plus).ravel()
    ev = SwitchingEvent(
        t=t_e,
        branch_before=old,
        branch_after=new,
        delta_rho=drho,
        h1_dot=sdot,
        z=z.copy(),
        y_minus=y_e.copy(),
        y_plus=y_plus.copy(),
    )
    return ev, y_plus


def hamiltonian_values(traj: ExtremalTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Hamiltonian at every stored node."""
    k = kernels(traj.chart)
    ts, hs = [], []
    for arc in traj.arcs:
        for t, y in zip(arc.t, arc.y):
            ts.append(t)
            hs.append(float(k.hamiltonian(y[:NZ], traj.par, arc.branch)))
    return np.array(ts), np.array(hs)


def hamiltonian_drift(traj: ExtremalTrajectory) -> float:
    """Largest deviation of H from its initial value over the stored nodes."""
    _, hs = hamiltonian_values(traj)
    return float(np.max(np.abs(hs - hs[0])))
