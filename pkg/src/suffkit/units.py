"""Canonical units and engine parameters.

Lengths are measured in units of the geostationary radius, masses in units of
the initial spacecraft mass and time is chosen so that the Earth gravitational
parameter equals one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MU_EARTH_KM3_S2 = 398600.47
GEO_RADIUS_KM = 42165.0
G0_M_S2 = 9.8
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class ScaleSet:
    """Conversion factors between SI-like units and canonical units."""

    length_unit: float = GEO_RADIUS_KM  # km
    mass_unit: float = 1500.0  # kg
    mu: float = MU_EARTH_KM3_S2  # km^3/s^2

    def __post_init__(self):
        if self.length_unit <= 0 or self.mass_unit <= 0 or self.mu <= 0:
            raise ValueError("scale units must be strictly positive")

    @property
    def time_unit(self) -> float:
        """Seconds per canonical time unit (chosen so that mu = 1)."""
        return math.sqrt(self.length_unit**3 / self.mu)

    @property
    def velocity_unit(self) -> float:
        """km/s per canonical velocity unit."""
        return self.length_unit / self.time_unit

    @property
    def acceleration_unit(self) -> float:
        """m/s^2 per canonical acceleration unit."""
        return 1e3 * self.length_unit / self.time_unit**2

    @property
    def force_unit(self) -> float:
        """Newtons per canonical force unit."""
        return self.mass_unit * self.acceleration_unit

    def hours(self, t: float) -> float:
        return t * self.time_unit / SECONDS_PER_HOUR

    def from_hours(self, hours: float) -> float:
        return hours * SECONDS_PER_HOUR / self.time_unit


@dataclass(frozen=True)
class EngineSpec:
    """Engine in canonical units.

    ``beta`` is the mass-flow coefficient, so that the mass rate at full
    thrust is ``-beta * u_max``.
    """

    u_max: float
    beta: float
    m_c: float

    def __post_init__(self):
        if not (self.u_max >= 0 and self.beta >= 0 and self.m_c > 0):
            raise ValueError("thrust and mass-flow coefficient must be non-negative, dry mass positive")

    @classmethod
    def from_si(
        cls,
        thrust_n: float,
        isp_s: float,
        dry_mass_kg: float,
        scales: ScaleSet,
        g0: float = G0_M_S2,
    ) -> "EngineSpec":
        """Build from thrust [N], specific impulse [s] and dry mass [kg]."""
        beta_si = 1.0 / (isp_s * g0)  # s/m
        return cls(
            u_max=thrust_n / scales.force_unit,
            beta=beta_si * 1e3 * scales.velocity_unit,
            m_c=dry_mass_kg / scales.mass_unit,
        )

    @property
    def mass_rate(self) -> float:
        return self.beta * self.u_max
