import numpy as np
import pytest

from suffkit.dynamics import BURN, MEOE, kernels
from suffkit.flow import propagate
from suffkit.manifold import meoe_target
from suffkit.shooting import ShootingProblem, ShootingUnknowns
from suffkit.units import EngineSpec, ScaleSet

SCALES = ScaleSet()
# Inclined ellipse with perigee 6642.857 km, starting at apogee.
X0 = np.array([11625.0 / 42165.0, 0.75, 0.0, 0.0612, 0.0, np.pi, 1.0])
# Element costates of a short burn-coast-burn extremal (mass costate from H = 0).
PE_SHORT = np.array([20.4092, -25.5567, 0.4181, -2.8388, -0.4526, -0.0431])
T_SHORT = 3.25


def engine(thrust_n: float = 10.0) -> EngineSpec:
    return EngineSpec.from_si(thrust_n, 2000.0, 500.0, SCALES)


def level_costate(x0, pe, eng) -> np.ndarray:
    """Append the mass costate that puts ``(x0, p)`` on ``H = 0`` with the engine on."""
    par = np.array([eng.u_max, eng.beta, 1.0])
    z = np.concatenate([x0, pe, [0.0]])
    h = float(kernels(MEOE).hamiltonian(z, par, BURN))
    return np.append(pe, h / (eng.beta * eng.u_max))


def gauge_shift(p0, p_m_final, eng) -> np.ndarray:
    """Costate on the same state trajectory whose final mass costate is zero."""
    c = 1.0 / (eng.beta * eng.u_max)
    k = -p_m_final / (p_m_final + c)
    g = np.append(p0[:6], p0[6] + c)
    return p0 + k * g


class ShortExtremal:
    """Two-burn extremal ending inside its second burn; its final orbit is the target."""

    def __init__(self):
        self.engine = engine()
        self.x0 = X0.copy()
        self.t_f = T_SHORT
        p_raw = level_costate(self.x0, PE_SHORT, self.engine)
        p_m_final = propagate(self.x0, p_raw, self.t_f, self.engine).final()[13]
        self.p0 = gauge_shift(p_raw, p_m_final, self.engine)
        self.traj = propagate(self.x0, self.p0, self.t_f, self.engine)
        self.x_f = self.traj.final()[:7].copy()
        self.manifold = meoe_target(*self.x_f[:6])
        self.problem = ShootingProblem(self.x0, self.engine, self.manifold)
        self.unknowns = ShootingUnknowns(self.p0, self.t_f)


@pytest.fixture(scope="session")
def short_extremal() -> ShortExtremal:
    return ShortExtremal()


@pytest.fixture(scope="session")
def case_a_engine() -> EngineSpec:
    return engine(10.0)


@pytest.fixture
def geo_target():
    return meoe_target(1.0, 0.0, 0.0, 0.0, 0.0, 18 * np.pi)


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
