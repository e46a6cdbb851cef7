import numpy as np
import pytest

from suffkit.dynamics import BURN, COAST, MEOE, kernels
from suffkit.flow import propagate
from suffkit.integrate import NZ
from suffkit.manifold import affine_target
from suffkit.second_order import (
    DeltaArc, DeltaTrace, PreconditionError, SwitchingDelta, VariationalState, build_family_basis,
    check_condition1, check_condition2, check_condition3, delta_trace, gauge_generator, gauge_residual,
    determinant_resolution, projected_form, propagate_family, run_sufficiency, singular_arcs, switching_jump, switching_time_gradient,
)

from conftest import X0


@pytest.fixture(scope="module")
def reduced(short_extremal):
    s = short_extremal
    basis = build_family_basis(s.x0, s.p0, s.engine, reduced=True)
    return basis, propagate_family(s.x0, s.p0, s.t_f, s.engine, basis)


@pytest.fixture(scope="module")
def full(short_extremal):
    s = short_extremal
    basis = build_family_basis(s.x0, s.p0, s.engine)
    return basis, propagate_family(s.x0, s.p0, s.t_f, s.engine, basis)


def _fd_state(s, direction, t, eps=1e-6):
    plus = propagate(s.x0, s.p0 + eps * direction, t, s.engine).final()
    minus = propagate(s.x0, s.p0 - eps * direction, t, s.engine).final()
    return (plus - minus) / (2 * eps)


def _fd_family(s, basis, t):
    return np.column_stack([_fd_state(s, basis.E[:, j], t)[:7] for j in range(basis.E.shape[1])])


def test_basis_is_orthonormal_complement(short_extremal, full, reduced):
    s = short_extremal
    f = np.asarray(kernels(MEOE).field(np.concatenate([s.x0, s.p0]), full[1].par, BURN))[:7]
    for basis, k in ((full[0], 6), (reduced[0], 5)):
        E = basis.E
        assert E.shape == (7, k)
        np.testing.assert_allclose(E.T @ E, np.eye(k), atol=1e-12)
        np.testing.assert_allclose(f @ E, 0.0, atol=1e-12 * np.linalg.norm(f))
    np.testing.assert_allclose(gauge_generator(s.p0, s.engine) @ reduced[0].E, 0.0, atol=1e-10)


def test_gauge_generator_lies_in_every_family(short_extremal):
    s = short_extremal
    g = gauge_generator(s.p0, s.engine)
    f = np.asarray(kernels(MEOE).field(np.concatenate([s.x0, s.p0]), np.array([s.engine.u_max, s.engine.beta, 1.0]),
                                       BURN))[:7]
    # g . xdot = H = 0
    assert abs(g @ f) < 1e-10 * np.linalg.norm(g) * np.linalg.norm(f)


def test_gauge_direction_leaves_state_unchanged(short_extremal):
    s = short_extremal
    g = gauge_generator(s.p0, s.engine)
    other = propagate(s.x0, s.p0 + 0.05 * g, s.t_f, s.engine)
    np.testing.assert_allclose(other.switching_times, s.traj.switching_times, atol=1e-9)
    np.testing.assert_allclose(other.final()[:7], s.x_f, atol=1e-10)


def test_family_matches_finite_differences_before_first_switching(short_extremal, reduced):
    s = short_extremal
    basis, traj = reduced
    t = 0.5 * s.traj.switching_times[0]
    X = traj.variations(traj.evaluate(t))[:7]
    fd = _fd_family(s, basis, t)
    np.testing.assert_allclose(X, fd, rtol=1e-3, atol=1e-3 * np.abs(fd).max())


def test_family_matches_finite_differences_after_two_switchings(short_extremal, reduced):
    s = short_extremal
    basis, traj = reduced
    assert len(s.traj.switching_times) == 2
    X = traj.variations(traj.final())[:7]
    fd = _fd_family(s, basis, s.t_f)
    np.testing.assert_allclose(X, fd, rtol=1e-2, atol=1e-2 * np.abs(fd).max())


def test_switching_time_gradient_matches_finite_differences(short_extremal, reduced):
    s = short_extremal
    basis, traj = reduced
    eps = 1e-6
    for i, ev in enumerate(traj.events):
        phi = traj.variations(ev.y_minus)
        V = VariationalState(phi[:7], phi[7:], ev.t)
        grad = switching_time_gradient(ev, V, traj)
        fd = []
        for j in range(basis.E.shape[1]):
            tp = propagate(s.x0, s.p0 + eps * basis.E[:, j], s.t_f, s.engine).switching_times[i]
            tm = propagate(s.x0, s.p0 - eps * basis.E[:, j], s.t_f, s.engine).switching_times[i]
            fd.append((tp - tm) / (2 * eps))
        np.testing.assert_allclose(grad, fd, rtol=1e-3, atol=1e-3 * np.abs(fd).max())


def test_jump_equals_saltation_of_the_canonical_field(reduced):
    _, traj = reduced
    k = kernels(MEOE)
    for ev in traj.events:
        phi = traj.variations(ev.y_minus)
        V = VariationalState(phi[:7], phi[7:], ev.t)
        out = switching_jump(V, ev, traj)
        grad = np.asarray(k.efficiency_grad(ev.z, traj.par))
        df = np.asarray(k.field(ev.z, traj.par, ev.branch_after)) - np.asarray(k.field(ev.z, traj.par, ev.branch_before))
        salt = phi + np.outer(df, grad @ phi) / ev.h1_dot
        np.testing.assert_allclose(np.vstack([out.X, out.P]), salt, rtol=1e-10, atol=1e-10 * np.abs(salt).max())
        np.testing.assert_allclose(traj.variations(ev.y_plus), salt, rtol=1e-10, atol=1e-10 * np.abs(salt).max())


def test_jump_sign_depends_on_switching_direction(reduced):
    _, traj = reduced
    kinds = [(ev.branch_before, ev.branch_after, ev.delta_rho) for ev in traj.events]
    assert kinds == [(BURN, COAST, -1.0), (COAST, BURN, 1.0)]


def test_delta_matches_finite_difference_determinant(short_extremal, reduced):
    s = short_extremal
    basis, traj = reduced
    tr = delta_trace(traj, 50)
    for t in (0.3 * s.traj.switching_times[0], s.t_f):
        z = s.traj.evaluate(t, side="left")
        xdot = np.asarray(kernels(MEOE).field(z[:NZ], traj.par, BURN))[:7]
        em = np.eye(7)[:, 6:]
        d_fd = np.linalg.det(np.column_stack([xdot, _fd_family(s, basis, t), em]))
        d = tr.evaluator(t) if t < s.t_f else tr.delta_f
        assert d == pytest.approx(d_fd, rel=1e-2)


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_delta_scales_with_family_normalization(short_extremal, reduced, c):
    s = short_extremal
    basis, traj = reduced
    scaled = propagate_family(s.x0, s.p0, s.t_f, s.engine, c * basis.E)
    a, b = delta_trace(traj, 20), delta_trace(scaled, 20)
    ta, da = a.concatenated()
    tb, db = b.concatenated()
    mask = np.abs(da) > 1e-6 * np.abs(da).max()
    np.testing.assert_allclose(db[mask], c**5 * da[mask], rtol=1e-8)
    # the resolution does not depend on the normalization
    np.testing.assert_allclose(np.concatenate([x.resolution for x in b.arcs])[mask],
                               np.concatenate([x.resolution for x in a.arcs])[mask], rtol=1e-8)


def test_full_family_is_degenerate_along_the_gauge(short_extremal, full):
    s = short_extremal
    basis, traj = full
    tr = delta_trace(traj, 40)
    assert singular_arcs(tr) == [0, 1, 2]
    assert gauge_residual(traj, basis, s.engine, s.p0) < 1e-8
    c1 = check_condition1(tr)
    assert not c1.passed and c1.singular_arcs == [0, 1, 2]
    assert all(v.status == "indeterminate" for v in check_condition2(tr).switchings)
    with pytest.raises(PreconditionError):
        check_condition3(traj, s.manifold)


def test_reduced_family_condition3_is_vacuous_for_orbit_target(short_extremal, reduced):
    s = short_extremal
    c3 = check_condition3(reduced[1], s.manifold)
    assert c3.passed and c3.vacuous
    partial = affine_target(np.eye(7)[:5], s.x_f[:5])
    with pytest.raises(PreconditionError):
        check_condition3(reduced[1], partial)


def test_pure_coast_has_no_costate_influence(case_a_engine):
    p0 = np.array([1e-3, 0, 0, 0, 0, 0, 0.0])
    basis = build_family_basis(X0, p0, case_a_engine, reduced=True)
    traj = propagate_family(X0, p0, 2.0, case_a_engine, basis)
    assert traj.labels == ["coast"]
    np.testing.assert_allclose(traj.variations(traj.final())[:7], 0.0, atol=1e-14)
    tr = delta_trace(traj, 20)
    assert singular_arcs(tr) == [0]
    assert not check_condition1(tr).passed


def test_sufficiency_report_on_the_short_extremal(short_extremal):
    s = short_extremal
    rep = run_sufficiency(s.x0, s.p0, s.t_f, s.engine, s.manifold, samples_per_arc=100, family="reduced")
    assert rep.assumptions.passed
    assert rep.condition1.passed, rep.condition1
    assert [v.status for v in rep.condition2.switchings] == ["positive", "positive"]
    assert rep.condition3.vacuous
    assert rep.overall and rep.failure_class is None
    lit = run_sufficiency(s.x0, s.p0, s.t_f, s.engine, s.manifold, samples_per_arc=40)
    assert lit.family == "full"
    assert not lit.overall and lit.failure_class == "degenerate_family"
    assert lit.condition3 is None and lit.notes
    with pytest.raises(ValueError):
        run_sufficiency(s.x0, s.p0, s.t_f, s.engine, s.manifold, family="other")


# --- synthetic traces ---------------------------------------------------------


def _trace(pieces, switch_pairs=None, resolutions=None):
    arcs = []
    for i, (t, d) in enumerate(pieces):
        t, d = np.asarray(t, float), np.asarray(d, float)
        r = np.full(t.size, 0.1) if resolutions is None else np.asarray(resolutions[i], float)
        arcs.append(DeltaArc(i, BURN if i % 2 == 0 else COAST, t, d, r))
    sw = []
    for i in range(len(arcs) - 1):
        a, b = arcs[i], arcs[i + 1]
        sw.append(SwitchingDelta(float(a.t[-1]), float(a.delta[-1]), float(b.delta[0]), 1.0,
                                 float(a.resolution[-1]), float(b.resolution[0])))
    return DeltaTrace(arcs, sw, float(arcs[-1].t[-1]), float(arcs[-1].delta[-1]))


def test_positive_trace_passes():
    t1, t2 = np.linspace(0, 1, 11), np.linspace(1, 2, 11)
    tr = _trace([(t1, t1**3), (t2, 1 + t2)])
    assert check_condition1(tr).passed
    assert check_condition2(tr).passed


def test_sign_change_is_a_zero():
    t = np.linspace(0, 2, 21)
    c1 = check_condition1(_trace([(t, t * (t - 1.05))]))
    assert not c1.passed
    assert c1.zeros == pytest.approx([1.05], abs=0.1)


def test_touching_zero_is_detected():
    t = np.linspace(0, 2, 21)
    c1 = check_condition1(_trace([(t, 1e-3 + (t - 1.0) ** 2)]))
    assert c1.passed
    c1 = check_condition1(_trace([(t, (t - 1.0) ** 2 + t * 0 + (t == 0))]))
    assert not c1.passed and c1.zeros == [pytest.approx(1.0)]
    c1 = check_condition1(_trace([(t, (t - 1.0) ** 2 + 1e-12)]))
    assert not c1.passed and c1.dips == [pytest.approx(1.0)]


def test_interior_dip_below_threshold_detected():
    t = np.linspace(0, 2, 21)
    d = 1.0 + 0 * t
    d[10] = 1e-12
    c1 = check_condition1(_trace([(t, d)]))
    assert not c1.passed and c1.dips == [pytest.approx(1.0)]


def test_negative_switching_product_fails():
    t1, t2 = np.linspace(0, 1, 11), np.linspace(1, 2, 11)
    c2 = check_condition2(_trace([(t1, 1 + t1), (t2, -1 - t2)]))
    assert not c2.passed and [v.status for v in c2.switchings] == ["negative"]


def test_unresolved_one_sided_value_is_indeterminate():
    t1, t2 = np.linspace(0, 1, 11), np.linspace(1, 2, 11)
    r2 = np.full(11, 0.1)
    r2[0] = 1e-14
    c2 = check_condition2(_trace([(t1, 1 + t1), (t2, 1 + t2)], resolutions=[np.full(11, 0.1), r2]))
    assert [v.status for v in c2.switchings] == ["indeterminate"]


def test_initial_layer_noise_is_ignored_but_interior_noise_fails():
    t = np.linspace(0, 1, 11)
    d = t**3
    d[1:3] = [-1e-30, 1e-30]
    r = np.full(11, 0.1)
    r[:3] = 1e-20
    c1 = check_condition1(_trace([(t, d)], resolutions=[r]))
    assert c1.passed and c1.initial_layer == pytest.approx(0.3)
    r2 = np.full(11, 0.1)
    r2[5] = 1e-20
    c1 = check_condition1(_trace([(t, 1 + t)], resolutions=[r2]))
    assert not c1.passed and c1.unresolved == [pytest.approx(0.5)]
    assert not check_condition1(_trace([(t, d)], resolutions=[r]), allow_initial_layer=False).passed


def test_zero_final_value_fails():
    t = np.linspace(0, 1, 11)
    d = 1 - t
    c1 = check_condition1(_trace([(t, d)]))
    assert not c1.final_ok and not c1.passed


def test_projected_form_by_hand():
    riccati = np.diag([1.0, 2.0, 3.0, 0, 0, 0, 0])
    tangent = np.eye(7)[:, :2]
    nu = np.array([0.5])
    hess = np.zeros((1, 7, 7))
    hess[0, 1, 1] = 2.0
    np.testing.assert_allclose(projected_form(riccati, tangent, nu, hess), np.diag([1.0, 1.0]))


def test_determinant_resolution_properties():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(7, 7))
    r = determinant_resolution(m)
    scaled = np.diag(rng.uniform(1e-6, 1e6, 7)) @ m @ np.diag(rng.uniform(1e-6, 1e6, 7))
    assert determinant_resolution(scaled) == pytest.approx(r, rel=1e-6)
    assert determinant_resolution(np.eye(7)) == pytest.approx(1 / 7)
    sing = m.copy()
    sing[:, 3] = sing[:, 1]
    assert determinant_resolution(sing) < 1e-14
    assert determinant_resolution(np.zeros((7, 7))) == 0.0
    assert determinant_resolution(np.stack([m, np.eye(7)])).shape == (2,)
