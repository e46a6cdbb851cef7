"""Jitted Dormand-Prince 8(5,3) steps for the (augmented) extremal system.

Only single steps are compiled; step-size control, event location and
bookkeeping live in :mod:`suffkit.flow`.  A step from a stored node doubles as
the continuous extension of the solution inside that step.
"""

from __future__ import annotations

import functools

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from suffkit.dynamics import N_STATE, Chart, _efficiency, _field

N_STAGES = _dop.N_STAGES
_A = np.asarray(_dop.A[:N_STAGES, :N_STAGES])
_B = np.asarray(_dop.B)
_E3 = np.asarray(_dop.E3)
_E5 = np.asarray(_dop.E5)
ORDER = 8
ERROR_EXPONENT = -1.0 / ORDER

NZ = 2 * N_STATE


def _augmented_rhs(chart: Chart, nvar: int):
    """Right-hand side of z' = F(z) together with Phi' = DF(z) Phi (Phi is 14 x nvar)."""

    def field(z, par, branch):
        return _field(chart, z, par, branch)

    if nvar == 0:
        return field

    jac = jax.jacfwd(field)

    def rhs(y, par, branch):
        z = y[:NZ]
        phi = y[NZ:].reshape(NZ, nvar)
        return jnp.concatenate([field(z, par, branch), (jac(z, par, branch) @ phi).ravel()])

    return rhs


class Stepper:
    """Compiled kernels for one chart and one number of variational columns."""

    def __init__(self, chart: Chart, nvar: int):
        self.chart = chart
        self.nvar = nvar
        self.size = NZ * (1 + nvar)
        rhs = _augmented_rhs(chart, nvar)

        def step(y, f0, h, par, branch, atol, rtol):
            ks = [f0]
            for s in range(1, N_STAGES):
                dy = sum(_A[s, j] * ks[j] for j in range(s) if _A[s, j] != 0.0)
                ks.append(rhs(y + h * dy, par, branch))
            y_new = y + h * sum(_B[j] * ks[j] for j in range(N_STAGES) if _B[j] != 0.0)
            f_new = rhs(y_new, par, branch)
            ks.append(f_new)
            kmat = jnp.stack(ks)
            scale = atol + rtol * jnp.maximum(jnp.abs(y), jnp.abs(y_new))
            err5 = (_E5 @ kmat) / scale
            err3 = (_E3 @ kmat) / scale
            e5 = err5 @ err5
            e3 = err3 @ err3
            denom = jnp.maximum(e5 + 0.01 * e3, 1e-300)
            err = jnp.abs(h) * e5 / jnp.sqrt(denom * y.shape[0])
            z = y_new[:NZ]
            eff = _efficiency(chart, z[:N_STATE], z[N_STATE:], par)
            return y_new, f_new, err, eff, chart.radius(z[:N_STATE])

        def short(y, f0, h, par, branch):
            ks = [f0]
            for s in range(1, N_STAGES):
                dy = sum(_A[s, j] * ks[j] for j in range(s) if _A[s, j] != 0.0)
                ks.append(rhs(y + h * dy, par, branch))
            y_new = y + h * sum(_B[j] * ks[j] for j in range(N_STAGES) if _B[j] != 0.0)
            z = y_new[:NZ]
            return y_new, _efficiency(chart, z[:N_STATE], z[N_STATE:], par)

        self.step = jax.jit(step)
        self.advance = jax.jit(short)
        self.rhs = jax.jit(rhs)
        self.efficiency = jax.jit(lambda y, par: _efficiency(chart, y[:N_STATE], y[N_STATE:NZ], par))
        self.efficiency_grad = jax.jit(
            jax.grad(lambda z, par: _efficiency(chart, z[:N_STATE], z[N_STATE:], par))
        )
        self.field = jax.jit(lambda z, par, br: _field(chart, z, par, br))


@functools.lru_cache(maxsize=None)
def stepper(chart: Chart, nvar: int = 0) -> Stepper:
    return Stepper(chart, nvar)
