"""Modified equinoctial elements <-> Cartesian state conversions.

Elements follow Broucke & Cefola: ``P`` semilatus rectum, ``(ex, ey)``
eccentricity vector, ``(hx, hy) = tan(i/2) (cos RAAN, sin RAAN)`` and ``l`` the
true longitude.  The true longitude is never reduced modulo 2 pi; a hint picks
the winding when converting back from Cartesian coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnsupportedOrbitError(ValueError):
    """Parabolic or hyperbolic orbits have no elliptic element set."""


@dataclass(frozen=True)
class Meoe:
    P: float
    ex: float
    ey: float
    hx: float
    hy: float
    l: float
    m: float = 1.0

    def __post_init__(self):
        if not self.P > 0:
            raise UnsupportedOrbitError(f"semilatus rectum must be positive, got {self.P}")
        if self.ex**2 + self.ey**2 >= 1.0:
            raise UnsupportedOrbitError("eccentricity must be below one")

    def as_array(self) -> np.ndarray:
        return np.array([self.P, self.ex, self.ey, self.hx, self.hy, self.l, self.m])

    @classmethod
    def from_array(cls, a) -> "Meoe":
        return cls(*[float(v) for v in a])

    @property
    def radius(self) -> float:
        return self.P / (1.0 + self.ex * np.cos(self.l) + self.ey * np.sin(self.l))


def equinoctial_frame(hx: float, hy: float):
    """Unit vectors (f, g, w) of the equinoctial frame."""
    s2 = 1.0 + hx**2 + hy**2
    f = np.array([1.0 + hx**2 - hy**2, 2.0 * hx * hy, -2.0 * hy]) / s2
    g = np.array([2.0 * hx * hy, 1.0 - hx**2 + hy**2, 2.0 * hx]) / s2
    w = np.array([2.0 * hy, -2.0 * hx, 1.0 - hx**2 - hy**2]) / s2
    return f, g, w


def meoe_to_cartesian(e: Meoe, mu: float = 1.0) -> np.ndarray:
    """Return the Cartesian state ``(r, v, m)``."""
    f, g, _ = equinoctial_frame(e.hx, e.hy)
    cl, sl = np.cos(e.l), np.sin(e.l)
    w = 1.0 + e.ex * cl + e.ey * sl
    r = e.P / w
    k = np.sqrt(mu / e.P)
    pos = r * (cl * f + sl * g)
    vel = k * (-(e.ey + sl) * f + (e.ex + cl) * g)
    return np.concatenate([pos, vel, [e.m]])


def cartesian_to_meoe(x, l_hint: float | None = None, mu: float = 1.0) -> Meoe:
    """Convert a Cartesian state to elements.

    ``l_hint`` selects the 2 pi branch of the unwrapped true longitude (the
    branch closest to the hint is returned).
    """
    x = np.asarray(x, dtype=float)
    r, v = x[:3], x[3:6]
    m = float(x[6]) if x.shape[0] > 6 else 1.0
    rn = np.linalg.norm(r)
    hvec = np.cross(r, v)
    hn = np.linalg.norm(hvec)
    if rn == 0.0 or hn == 0.0:
        raise UnsupportedOrbitError("degenerate (rectilinear) state")
    energy = 0.5 * v @ v - mu / rn
    if energy >= 0.0:
        raise UnsupportedOrbitError("parabolic or hyperbolic state")
    what = hvec / hn
    if what[2] <= -1.0 + 1e-14:
        raise UnsupportedOrbitError("retrograde equatorial orbit is singular in these elements")
    hx = -what[1] / (1.0 + what[2])
    hy = what[0] / (1.0 + what[2])
    P = hn**2 / mu
    evec = np.cross(v, hvec) / mu - r / rn
    f, g, _ = equinoctial_frame(hx, hy)
    ex, ey = evec @ f, evec @ g
    l = np.arctan2(r @ g, r @ f)
    if l_hint is not None:
        l = l + 2.0 * np.pi * np.round((l_hint - l) / (2.0 * np.pi))
    return Meoe(P, ex, ey, hx, hy, l, m)


def rtn_frame(x) -> np.ndarray:
    """Columns are the radial, transverse and normal unit vectors."""
    r, v = np.asarray(x[:3]), np.asarray(x[3:6])
    rhat = r / np.linalg.norm(r)
    n = np.cross(r, v)
    nhat = n / np.linalg.norm(n)
    that = np.cross(nhat, rhat)
    return np.column_stack([rhat, that, nhat])
