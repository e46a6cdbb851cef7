"""Controlled two-body dynamics, maximized Hamiltonian and optimal control law.

States are 7-vectors and costates are 7-vectors in one of two charts:

* ``CARTESIAN``: ``x = (r, v, m)``
* ``MEOE``: ``x = (P, ex, ey, hx, hy, l, m)`` (modified equinoctial elements)

In both charts the dynamics read ``xdot = f0(x) + rho * f1(x, omega)`` with
``f1 = ((u_max/m) B(x) omega, -beta u_max)``, where ``B`` maps a thrust
direction to element rates (``B = [0; I]`` in Cartesian coordinates, the
Gauss matrix in equinoctial ones).  The throttle and direction maximize the
pseudo-Hamiltonian with the running cost ``lam*rho + (1-lam)*rho**2``; at
``lam = 1`` this is the fuel (L1) cost and the control is bang-bang.

All derivatives are obtained by forward/reverse automatic differentiation of
the Hamiltonian of the active control branch.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from suffkit.units import EngineSpec

N_STATE = 7

COAST, SMOOTH, BURN = 0, 1, 2
BRANCH_NAMES = {COAST: "coast", SMOOTH: "smooth", BURN: "burn"}


class DynamicsError(ValueError):
    pass


class SingularityError(DynamicsError):
    """Radius (or conic radius) below the configured floor."""


class DryMassError(DynamicsError):
    """Mass below the dry mass of the spacecraft."""


class BranchAmbiguityError(DynamicsError):
    """Second derivatives requested on a switching surface."""


@dataclass(frozen=True)
class ControlSample:
    rho: float
    omega: np.ndarray
    degenerate_primer: bool = False


@dataclass(frozen=True)
class HamiltonianDerivatives:
    H_x: np.ndarray
    H_p: np.ndarray
    H_xx: np.ndarray
    H_xp: np.ndarray
    H_px: np.ndarray
    H_pp: np.ndarray


# --- charts -----------------------------------------------------------------


def _cart_drift(x):
    r = x[:3]
    v = x[3:6]
    rn = jnp.sqrt(r @ r)
    return jnp.concatenate([v, -r / rn**3, jnp.zeros(1)])


def _cart_gain(x):
    return jnp.concatenate([jnp.zeros((3, 3)), jnp.eye(3)])


def _meoe_aux(x):
    P, ex, ey, hx, hy, l = x[0], x[1], x[2], x[3], x[4], x[5]
    cl, sl = jnp.cos(l), jnp.sin(l)
    w = 1.0 + ex * cl + ey * sl
    return P, ex, ey, hx, hy, cl, sl, w


def _meoe_drift(x):
    P, *_, w = _meoe_aux(x)
    ldot = w**2 / P**1.5
    return jnp.zeros(N_STATE).at[5].set(ldot)


def _meoe_gain(x):
    P, ex, ey, hx, hy, cl, sl, w = _meoe_aux(x)
    s = jnp.sqrt(P)
    z = hx * sl - hy * cl
    s2 = 1.0 + hx**2 + hy**2
    zero = jnp.zeros_like(P)
    return jnp.array(
        [
            [zero, 2.0 * P * s / w, zero],
            [s * sl, s * ((w + 1.0) * cl + ex) / w, -s * ey * z / w],
            [-s * cl, s * ((w + 1.0) * sl + ey) / w, s * ex * z / w],
            [zero, zero, s * s2 * cl / (2.0 * w)],
            [zero, zero, s * s2 * sl / (2.0 * w)],
            [zero, zero, s * z / w],
        ]
    )


def _meoe_to_cart(x):
    """Traceable element-to-Cartesian map (mass passed through)."""
    P, ex, ey, hx, hy, cl, sl, w = _meoe_aux(x)
    s2 = 1.0 + hx**2 + hy**2
    f = jnp.array([1.0 + hx**2 - hy**2, 2.0 * hx * hy, -2.0 * hy]) / s2
    g = jnp.array([2.0 * hx * hy, 1.0 - hx**2 + hy**2, 2.0 * hx]) / s2
    k = jnp.sqrt(1.0 / P)
    pos = P / w * (cl * f + sl * g)
    vel = k * (-(ey + sl) * f + (ex + cl) * g)
    return jnp.concatenate([pos, vel, x[6:7]])


_meoe_to_cart_jac = jax.jit(jax.jacfwd(_meoe_to_cart))


def meoe_phase_to_cartesian(z) -> np.ndarray:
    """Map an element state-costate pair to Cartesian; the costate maps as a covector."""
    z = np.asarray(z, dtype=float)
    x, p = z[:N_STATE], z[N_STATE:]
    jac = np.asarray(_meoe_to_cart_jac(x))
    return np.concatenate([np.asarray(_meoe_to_cart(x)), np.linalg.solve(jac.T, p)])


def _cart_radius(x):
    return jnp.sqrt(x[:3] @ x[:3])


def _meoe_radius(x):
    P, *_, w = _meoe_aux(x)
    return P / w


@dataclass(frozen=True)
class Chart:
    name: str
    drift: Callable
    gain: Callable
    radius: Callable

    def __hash__(self):
        return hash(self.name)

    def __eq__(self, other):
        return isinstance(other, Chart) and other.name == self.name


CARTESIAN = Chart("cartesian", _cart_drift, _cart_gain, _cart_radius)
MEOE = Chart("meoe", _meoe_drift, _meoe_gain, _meoe_radius)
CHARTS = {c.name: c for c in (CARTESIAN, MEOE)}


class Branch(enum.IntEnum):
    COAST = COAST
    SMOOTH = SMOOTH
    BURN = BURN


# --- Hamiltonian building blocks (traceable) --------------------------------
#
# ``par`` is the array (u_max, beta, lam).


def _primer(chart, x, p):
    return chart.gain(x).T @ p[:6]


def _efficiency(chart, x, p, par):
    """p . f1 evaluated at the optimal direction: H1 = efficiency - 1."""
    u_max, beta = par[0], par[1]
    b = _primer(chart, x, p)
    bb = b @ b
    # double where keeps the gradient finite at a vanishing primer
    nb = jnp.where(bb > 0.0, jnp.sqrt(jnp.where(bb > 0.0, bb, 1.0)), 0.0)
    return u_max / x[6] * nb - beta * u_max * p[6]


def _hamiltonian(chart, z, par, branch):
    x, p = z[:N_STATE], z[N_STATE:]
    lam = par[2]
    h0 = p @ chart.drift(x)
    eff = _efficiency(chart, x, p, par)
    smooth = (eff - lam) ** 2 / (4.0 * jnp.maximum(1.0 - lam, 1e-300))
    return h0 + jnp.where(branch == BURN, eff - 1.0, 0.0) + jnp.where(branch == SMOOTH, smooth, 0.0)


def _field(chart, z, par, branch):
    g = jax.grad(_hamiltonian, argnums=1)(chart, z, par, branch)
    return jnp.concatenate([g[N_STATE:], -g[:N_STATE]])


def _throttle(eff, lam, branch):
    smooth = jnp.clip((eff - lam) / (2.0 * jnp.maximum(1.0 - lam, 1e-300)), 0.0, 1.0)
    return jnp.where(branch == BURN, 1.0, jnp.where(branch == SMOOTH, smooth, 0.0))


class Kernels:
    """Jitted chart-specific kernels.  Obtain via :func:`kernels`."""

    def __init__(self, chart: Chart):
        self.chart = chart
        c = chart
        self.hamiltonian = jax.jit(lambda z, par, br: _hamiltonian(c, z, par, br))
        self.field = jax.jit(lambda z, par, br: _field(c, z, par, br))
        self.field_jac = jax.jit(jax.jacfwd(lambda z, par, br: _field(c, z, par, br)))
        self.efficiency = jax.jit(lambda z, par: _efficiency(c, z[:N_STATE], z[N_STATE:], par))
        self.efficiency_grad = jax.jit(
            jax.grad(lambda z, par: _efficiency(c, z[:N_STATE], z[N_STATE:], par))
        )
        self.hessian = jax.jit(jax.hessian(lambda z, par, br: _hamiltonian(c, z, par, br)))
        self.primer = jax.jit(lambda z: _primer(c, z[:N_STATE], z[N_STATE:]))
        self.radius = jax.jit(lambda z: c.radius(z[:N_STATE]))
        self.drift = jax.jit(c.drift)
        self.gain = jax.jit(c.gain)


@functools.lru_cache(maxsize=None)
def kernels(chart: Chart) -> Kernels:
    return Kernels(chart)


def _resolve(chart) -> Chart:
    if isinstance(chart, str):
        return CHARTS[chart]
    return chart


def engine_par(engine: EngineSpec, lam: float) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"homotopy parameter must lie in [0, 1], got {lam}")
    return np.array([engine.u_max, engine.beta, lam])


def select_branch(eff: float, lam: float) -> int:
    """Control branch maximizing the pseudo-Hamiltonian for a given p.f1."""
    if lam >= 1.0:
        return BURN if eff > 1.0 else COAST
    if eff <= lam:
        return COAST
    if eff >= 2.0 - lam:
        return BURN
    return SMOOTH


def branch_margin(eff: float, lam: float) -> float:
    """Distance (in p.f1) from the nearest branch boundary."""
    if lam >= 1.0:
        return abs(eff - 1.0)
    return min(abs(eff - lam), abs(eff - (2.0 - lam)))


def _stack(x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != (N_STATE,) or p.shape != (N_STATE,):
        raise ValueError("state and costate must be 7-vectors")
    return np.concatenate([x, p])


def _check_state(x, chart: Chart, engine: EngineSpec | None = None, r_floor: float = 1e-3):
    x = np.asarray(x, dtype=float)
    if chart is CARTESIAN:
        r = float(np.linalg.norm(x[:3]))
    else:
        if x[0] <= 0.0:
            raise SingularityError(f"semilatus rectum must be positive, got {x[0]}")
        r = x[0] / (1.0 + x[1] * np.cos(x[5]) + x[2] * np.sin(x[5]))
    if not r > r_floor:
        raise SingularityError(f"radius {r} below floor {r_floor}")
    if engine is not None and x[6] < engine.m_c:
        raise DryMassError(f"mass {x[6]} below dry mass {engine.m_c}")


# --- public operations --------------------------------------------------------


def eval_f0(x, r_floor: float = 1e-3) -> np.ndarray:
    """Drift field ``(v, -r/|r|^3, 0)`` in canonical Cartesian coordinates."""
    x = np.asarray(x, dtype=float)
    _check_state(x, CARTESIAN, r_floor=r_floor)
    r = x[:3]
    rn = np.linalg.norm(r)
    return np.concatenate([x[3:6], -r / rn**3, [0.0]])


def eval_f1(x, omega, engine: EngineSpec) -> np.ndarray:
    """Control field ``(0, (u_max/m) omega, -beta u_max)`` (Cartesian)."""
    x = np.asarray(x, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if abs(np.linalg.norm(omega) - 1.0) > 1e-12:
        raise ValueError("thrust direction must be a unit vector")
    if x[6] < engine.m_c:
        raise DryMassError(f"mass {x[6]} below dry mass {engine.m_c}")
    return np.concatenate([np.zeros(3), engine.u_max / x[6] * omega, [-engine.beta * engine.u_max]])


def eval_f1_chart(x, omega, engine: EngineSpec, chart=CARTESIAN) -> np.ndarray:
    """Control field in any chart; ``omega`` is expressed in the chart's thrust frame."""
    chart = _resolve(chart)
    k = kernels(chart)
    x = np.asarray(x, dtype=float)
    b = np.asarray(k.gain(x))
    return np.concatenate([engine.u_max / x[6] * (b @ omega), [-engine.beta * engine.u_max]])


def control_from_costate(x, p, engine: EngineSpec, lam: float = 1.0, chart=CARTESIAN) -> ControlSample:
    """Pointwise maximizer of the pseudo-Hamiltonian over the thrust ball."""
    chart = _resolve(chart)
    k = kernels(chart)
    z = _stack(x, p)
    par = engine_par(engine, lam)
    b = np.asarray(k.primer(z))
    nb = np.linalg.norm(b)
    degenerate = nb == 0.0
    omega = np.array([1.0, 0.0, 0.0]) if degenerate else b / nb
    eff = float(k.efficiency(z, par))
    rho = float(_throttle(eff, lam, select_branch(eff, lam)))
    return ControlSample(rho=rho, omega=omega, degenerate_primer=bool(degenerate))


def pseudo_hamiltonian(x, p, rho, omega, engine: EngineSpec, lam: float = 1.0, chart=CARTESIAN) -> float:
    """``h = p.f0 + rho p.f1(omega) - (lam rho + (1-lam) rho^2)`` for an arbitrary control."""
    chart = _resolve(chart)
    k = kernels(chart)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    f0 = np.asarray(k.drift(x))
    f1 = eval_f1_chart(x, omega, engine, chart)
    return float(p @ f0 + rho * (p @ f1) - (lam * rho + (1.0 - lam) * rho**2))


def switching_fn(x, p, engine: EngineSpec, chart=CARTESIAN) -> float:
    """``H1 = p.f1(x, omega(x, p)) - 1``."""
    chart = _resolve(chart)
    return float(kernels(chart).efficiency(_stack(x, p), engine_par(engine, 1.0))) - 1.0


def switching_fn_dot(x, p, engine: EngineSpec, lam: float = 1.0, chart=CARTESIAN) -> float:
    """Time derivative of H1 along the extremal flow (Poisson bracket with H).

    Off the switching surface the active branch is used; on it both branches
    give the same value since {H1, H1} = 0.
    """
    chart = _resolve(chart)
    k = kernels(chart)
    z = _stack(x, p)
    par = engine_par(engine, lam)
    eff = float(k.efficiency(z, par))
    br = select_branch(eff, lam)
    grad = np.asarray(k.efficiency_grad(z, par))
    return float(grad @ np.asarray(k.field(z, par, br)))


def hamiltonian(x, p, engine: EngineSpec, lam: float = 1.0, chart=CARTESIAN) -> float:
    """Maximized Hamiltonian (smoothed analog for ``lam < 1``)."""
    chart = _resolve(chart)
    k = kernels(chart)
    z = _stack(x, p)
    par = engine_par(engine, lam)
    br = select_branch(float(k.efficiency(z, par)), lam)
    return float(k.hamiltonian(z, par, br))


def hamiltonian_derivatives(
    x, p, engine: EngineSpec, lam: float = 1.0, chart=CARTESIAN, surface_tol: float = 1e-10
) -> HamiltonianDerivatives:
    """First and second partials of H with the active control branch frozen."""
    chart = _resolve(chart)
    k = kernels(chart)
    z = _stack(x, p)
    par = engine_par(engine, lam)
    eff = float(k.efficiency(z, par))
    if branch_margin(eff, lam) <= surface_tol:
        raise BranchAmbiguityError(f"point lies on a switching surface (p.f1 = {eff!r})")
    br = select_branch(eff, lam)
    n = N_STATE
    fld = np.asarray(k.field(z, par, br))
    hess = np.asarray(k.hessian(z, par, br))
    return HamiltonianDerivatives(
        H_x=-fld[n:],
        H_p=fld[:n],
        H_xx=hess[:n, :n],
        H_xp=hess[:n, n:],
        H_px=hess[n:, :n],
        H_pp=hess[n:, n:],
    )
