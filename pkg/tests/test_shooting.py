import numpy as np
import pytest

from suffkit.manifold import fixed_endpoint_target
from suffkit.shooting import (
    ContinuationStuckError, DivergedError, ShootingProblem, ShootingUnknowns, SolverOptions, continue_homotopy,
    estimate_final_time, residual, shooting_jacobian, solve,
)

from conftest import X0


def _perturbed(s, rel=1e-3, dt=5e-3, seed=0):
    rng = np.random.default_rng(seed)
    return ShootingUnknowns(s.p0 * (1 + rel * rng.standard_normal(7)), s.t_f + dt)


def test_residual_vanishes_on_the_extremal(short_extremal):
    s = short_extremal
    r = residual(s.unknowns, s.problem)
    assert r.manifold.shape == (6,)
    # free final mass: p_m(t_f) is the transversality residual
    assert r.transversality.shape == (1,)
    assert r.norm < 1e-11


def test_fixed_mass_target_is_gauge_degenerate(short_extremal):
    s = short_extremal
    mfd = fixed_endpoint_target(s.x_f)
    jac = shooting_jacobian(ShootingProblem(s.x0, s.engine, mfd), s.unknowns, method="variational")
    assert jac.shape == (8, 8)
    c = 1.0 / (s.engine.beta * s.engine.u_max)
    g = np.append(np.append(s.p0[:6], s.p0[6] + c), 0.0)
    assert np.linalg.norm(jac @ g) < 1e-7 * np.linalg.norm(jac) * np.linalg.norm(g)


@pytest.mark.parametrize("method", ["fd", "variational"])
def test_solve_recovers_extremal_from_perturbed_guess(short_extremal, method):
    s = short_extremal
    sol = solve(_perturbed(s), 1.0, s.problem, SolverOptions(jacobian=method))
    assert sol.residual_norm < 1e-10
    np.testing.assert_allclose(sol.p0, s.p0, rtol=1e-7, atol=1e-9)
    assert sol.t_f == pytest.approx(s.t_f, abs=1e-9)
    assert sol.trajectory.labels == ["burn", "coast", "burn"]


def test_variational_jacobian_matches_finite_differences(short_extremal):
    s = short_extremal
    u = _perturbed(s, 1e-4, 1e-3, seed=3)
    jv = shooting_jacobian(s.problem, u, method="variational")
    cols = []
    v = u.as_vector()
    for i in range(8):
        h = 1e-6 * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        rp = residual(ShootingUnknowns.from_vector(vp), s.problem).as_vector()
        rm = residual(ShootingUnknowns.from_vector(vm), s.problem).as_vector()
        cols.append((rp - rm) / (2 * h))
    jf = np.column_stack(cols)
    np.testing.assert_allclose(jv, jf, rtol=1e-5, atol=1e-6 * np.abs(jf).max())


def test_far_guess_reports_divergence(short_extremal):
    s = short_extremal
    far = ShootingUnknowns(-3.0 * s.p0, 0.5 * s.t_f)
    with pytest.raises(DivergedError) as info:
        solve(far, 1.0, s.problem, SolverOptions(max_iter=3))
    assert info.value.residual_norm > 1e-10


def test_homotopy_tracks_to_bang_bang(short_extremal):
    s = short_extremal
    sol = continue_homotopy(_perturbed(s, 1e-4, 0.0), [0.99, 1.0], s.problem, SolverOptions(jacobian="variational"))
    assert sol.lam == 1.0
    np.testing.assert_allclose(sol.p0, s.p0, rtol=1e-6, atol=1e-8)


def test_homotopy_schedule_validation(short_extremal):
    s = short_extremal
    with pytest.raises(ValueError):
        continue_homotopy(s.unknowns, [], s.problem)
    with pytest.raises(ValueError):
        continue_homotopy(s.unknowns, [1.0, 0.5], s.problem)
    with pytest.raises(ContinuationStuckError):
        continue_homotopy(ShootingUnknowns(-3.0 * s.p0, 0.5 * s.t_f), [1.0], s.problem, SolverOptions(max_iter=2))


def test_unknowns_validation():
    with pytest.raises(ValueError):
        ShootingUnknowns(np.zeros(6), 1.0)
    with pytest.raises(ValueError):
        ShootingUnknowns(np.zeros(7), 0.0)
    u = ShootingUnknowns(np.arange(7.0), 2.0)
    np.testing.assert_array_equal(ShootingUnknowns.from_vector(u.as_vector()).as_vector(), u.as_vector())


def test_final_time_estimate_is_keplerian():
    # one revolution on a circular orbit at the target radius
    x0 = np.array([1.0, 0, 0, 0, 0, 0, 1])
    assert estimate_final_time(x0, 2 * np.pi, 1.0) == pytest.approx(2 * np.pi)
    a0 = X0[0] / (1 - 0.75**2)
    expected = 8.5 * 0.5 * (2 * np.pi * a0**1.5 + 2 * np.pi)
    assert estimate_final_time(X0, 18 * np.pi, 1.0) == pytest.approx(expected)


def test_chart_mismatch_rejected(short_extremal):
    s = short_extremal
    with pytest.raises(ValueError):
        ShootingProblem(s.x0, s.engine, s.manifold, chart="cartesian")
