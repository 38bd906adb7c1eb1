import math

import numpy as np
import pytest

from porofem import kernels
from porofem.constitutive import E_to_lame, stress
from porofem.fem import assemble_load, error_norms, build_dof_map, gauss_rule, global_matrix, nodal_interpolate, vector_operators
from porofem.fem.assembly import pressure_divergence
from porofem.fem.fields import evaluate, physical_points
from porofem.manufactured import (
    ErrorAccumulator,
    ManufacturedCase,
    Theta,
    div_stress_fd,
    error_metrics,
    exact_fields,
    exact_p,
    exact_u,
    forcing_fluid,
    forcing_solid,
    manufactured_params,
)
from porofem.mesh import BoundaryTag, unit_square_mesh
from porofem.solver import SystemState

TWO_PI = 2 * math.pi


def shapes(x):
    """Hand-written spatial factors, independent of the package."""
    X, Y = x[:, 0], x[:, 1]
    sx, cx, sy, cy = np.sin(TWO_PI * X), np.cos(TWO_PI * X), np.sin(TWO_PI * Y), np.cos(TWO_PI * Y)
    u = np.column_stack([cx * sy, sx * cy]) / 100
    v = np.column_stack([sx * cy, -cx * sy])
    p = 60 * X**2 * Y - 20 * Y**3 - 5
    return u, v, p


@pytest.fixture
def pts(rng):
    return rng.uniform(0, 1, size=(20, 2))


def test_point_values_theta1():
    e = exact_fields(ManufacturedCase(Theta.EXP), 0.0, [[0.25, 0.0]])
    np.testing.assert_allclose(e.v[0], [1, 0], atol=1e-15)
    assert e.p[0] == pytest.approx(-5.0)


def test_velocity_is_pointwise_divergence_free(pts):
    for th in Theta:
        for t in (0.0, 0.37, 1.0):
            g = exact_fields(ManufacturedCase(th), t, pts).grad_v
            np.testing.assert_allclose(np.trace(g, axis1=1, axis2=2), 0.0, atol=1e-12)


def test_theta2_vanishes_at_one_third(pts):
    e = exact_fields(ManufacturedCase(Theta.SIN), 1 / 3, pts)
    for arr in (e.u, e.v, e.p, e.grad_u, e.grad_v, e.grad_p):
        assert np.abs(arr).max() < 1e-12


def test_gradients_and_time_derivatives_match_finite_differences(pts):
    case = ManufacturedCase(Theta.SIN)
    t, h = 0.21, 1e-6
    e = exact_fields(case, t, pts)
    ep, em = exact_fields(case, t + h, pts), exact_fields(case, t - h, pts)
    np.testing.assert_allclose(e.du_dt, (ep.u - em.u) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(e.dv_dt, (ep.v - em.v) / (2 * h), atol=1e-6)
    for k in range(2):
        d = np.zeros(2)
        d[k] = h
        a, b = exact_fields(case, t, pts + d), exact_fields(case, t, pts - d)
        np.testing.assert_allclose(e.grad_u[:, :, k], (a.u - b.u) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(e.grad_v[:, :, k], (a.v - b.v) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(e.grad_p[:, k], (a.p - b.p) / (2 * h), atol=1e-5)


def test_exact_field_invariants_by_quadrature(rng):
    """div v = 0 and mean p = 0 on the unit square at random times."""
    mesh = unit_square_mesh(3)
    q = gauss_rule(4)
    qp = physical_points(mesh, q.points).reshape(-1, 2)
    w = np.tile(q.weights * mesh.cell_area / 4, mesh.n_cells)
    for t in rng.uniform(0, 1, size=5):
        for th in Theta:
            e = exact_fields(ManufacturedCase(th), t, qp)
            assert abs(w @ np.trace(e.grad_v, axis1=1, axis2=2)) < 1e-12
            assert np.abs(np.trace(e.grad_v, axis1=1, axis2=2)).max() < 1e-12
            assert abs(w @ e.p) < 1e-12


def test_divergence_of_u_stays_inside_truncation_band():
    x = np.stack(np.meshgrid(np.linspace(0, 1, 101), np.linspace(0, 1, 101)), -1).reshape(-1, 2)
    g = exact_fields(ManufacturedCase(Theta.EXP), 0.0, x).grad_u
    m = np.abs(np.trace(g, axis1=1, axis2=2)).max()
    assert m == pytest.approx(4 * math.pi / 100, rel=1e-12)
    assert m < manufactured_params().delta


def test_fluid_forcing_theta2_at_t0(pts):
    # v = u = p = 0 at t = 0; only time derivatives survive:
    # f_f = rho dv/dt - alpha du/dt with d(theta2)/dt(0) = 3 pi
    case = ManufacturedCase(Theta.SIN)
    u, v, _ = shapes(pts)
    expected = 3 * math.pi * (case.params.rho * v - case.params.alpha * u)
    np.testing.assert_allclose(forcing_fluid(case, 0.0, pts), expected, atol=1e-12)


def test_fluid_forcing_full_expression(pts):
    case = ManufacturedCase(Theta.EXP)
    t = 0.4
    th = math.exp(-t)
    u, v, _ = shapes(pts)
    X, Y = pts[:, 0], pts[:, 1]
    grad_p = np.column_stack([120 * X * Y, 60 * X**2 - 60 * Y**2])
    prm = case.params
    # dv/dt = -theta v_shape, du/dt = -theta u_shape, lap v = -8 pi^2 v
    expected = (-prm.rho * th * v + prm.alpha * (th * v + th * u)
                + prm.nu * 8 * math.pi**2 * th * v + th * grad_p)
    np.testing.assert_allclose(forcing_fluid(case, t, pts), expected, rtol=1e-12, atol=1e-12)


def test_fluid_forcing_is_affine_in_viscosity(pts):
    t = 0.6
    f1 = forcing_fluid(ManufacturedCase(Theta.EXP, manufactured_params(nu=1.0)), t, pts)
    f2 = forcing_fluid(ManufacturedCase(Theta.EXP, manufactured_params(nu=2.0)), t, pts)
    _, v, _ = shapes(pts)
    # the difference is exactly -lap v = 8 pi^2 theta v
    np.testing.assert_allclose(f2 - f1, 8 * math.pi**2 * math.exp(-t) * v, rtol=1e-12)


def test_linear_solid_forcing_matches_closed_form(pts):
    """With lambda1 = lambda2 = 0 the stress is 2 mu eps + lam div u I, and for
    this u, div T = -8 pi^2 (2 mu + lam) u."""
    prm = manufactured_params(lambda1=0.0, lambda2=0.0)
    case = ManufacturedCase(Theta.EXP, prm)
    mu, lam = E_to_lame(prm.E1, prm.E2)
    t = 0.25
    th = math.exp(-t)
    u, v, _ = shapes(pts)
    expected = 8 * math.pi**2 * (2 * mu + lam) * th * u - prm.alpha * (th * v + th * u)
    np.testing.assert_allclose(forcing_solid(case, t, pts), expected, atol=1e-8)


def test_solid_forcing_theta2_at_one_third(pts):
    case = ManufacturedCase(Theta.SIN)
    u, _, _ = shapes(pts)
    expected = case.params.alpha * (-3 * math.pi) * u  # alpha du/dt with cos(pi) = -1
    np.testing.assert_allclose(forcing_solid(case, 1 / 3, pts), expected, atol=1e-9)


def test_stress_divergence_richardson(pts):
    case = ManufacturedCase(Theta.EXP)
    t = 0.1
    f = forcing_solid(case, t, pts)
    f_half = forcing_solid(case, t, pts, h=case.fd_step / 2)
    assert np.linalg.norm(f - f_half) / np.linalg.norm(f) <= 1e-6
    # second order: the difference shrinks by about four when the step halves
    d = [div_stress_fd(case, t, pts, h) for h in (4e-3, 2e-3, 1e-3)]
    ratio = np.linalg.norm(d[0] - d[1]) / np.linalg.norm(d[1] - d[2])
    assert ratio == pytest.approx(4.0, rel=0.05)


def test_weak_residual_of_exact_solution_converges():
    """Fluid and solid weak residuals of interpolated exact fields, with these
    forcings, vanish at order >= 2 under refinement."""
    case = ManufacturedCase(Theta.EXP)
    prm, t = case.params, 0.3
    res = []
    for m in (3, 4, 5):
        mesh = unit_square_mesh(m)
        um, pm = build_dof_map(mesh, "Q2", 2), build_dof_map(mesh, "Q1", 1)
        q = gauss_rule(3)
        ops = vector_operators(um, q)
        M = global_matrix(um, um, ops.mass.sum(0))
        K = global_matrix(um, um, ops.grad_grad.sum(0))
        B = global_matrix(pm, um, pressure_divergence(pm, ops, q).sum(0))

        def interp(attr):
            return nodal_interpolate(lambda x: getattr(exact_fields(case, t, x), attr), um)

        U, V, dU, dV = interp("u"), interp("v"), interp("du_dt"), interp("dv_dt")
        P = nodal_interpolate(lambda x: exact_fields(case, t, x).p, pm)
        qp = physical_points(mesh, q.points)
        Ff = assemble_load(um, ops, forcing_fluid(case, t, qp.reshape(-1, 2)).reshape(qp.shape))
        Fs = assemble_load(um, ops, forcing_solid(case, t, qp.reshape(-1, 2)).reshape(qp.shape))
        rf = M @ (prm.rho * dV + prm.alpha * (V - dU)) + prm.nu * (K @ V) - B.T @ P - Ff
        _, g = evaluate(U, um, q.points, with_values=False)
        local = np.einsum("cpij,pnij,p->cn", stress(g, prm), ops.gphi, ops.weights)
        rs = np.zeros(um.n_dofs)
        kernels.scatter_add(rs, um.cell_dofs, local)
        rs += -prm.alpha * (M @ (V - dU)) - Fs
        fixed = np.concatenate([um.node_dofs(um.boundary_nodes(tag)) for tag in BoundaryTag])
        free = np.setdiff1d(np.arange(um.n_dofs), fixed)
        res.append((np.linalg.norm(rf[free]), np.linalg.norm(rs[free])))
    for coarse, fine in zip(res, res[1:]):
        for a, b in zip(coarse, fine):
            assert math.log2(a / b) >= 2.0


def _interpolant_history(case, m, N):
    mesh = unit_square_mesh(m)
    um, pm = build_dof_map(mesh, "Q2", 2), build_dof_map(mesh, "Q1", 1)
    hist = []
    for n in range(N + 1):
        t = n / N
        e = lambda x, t=t: exact_fields(case, t, x)  # noqa: E731
        hist.append(SystemState(n, t, nodal_interpolate(lambda x: e(x).u, um),
                                nodal_interpolate(lambda x: e(x).v, um),
                                nodal_interpolate(lambda x: e(x).p, pm)))
    return hist, (um, um, pm)


def test_error_metrics_of_interpolants_scale_with_h():
    case = ManufacturedCase(Theta.EXP)
    reps = []
    for m in (3, 4, 5):
        hist, maps = _interpolant_history(case, m, 4)
        reps.append(error_metrics(hist, case, maps))
    for a, b in zip(reps, reps[1:]):
        assert math.log2(a.err_u_l2 / b.err_u_l2) == pytest.approx(3, abs=0.2)
        assert math.log2(a.err_v_l2 / b.err_v_l2) == pytest.approx(3, abs=0.2)
        assert math.log2(a.err_u_h01 / b.err_u_h01) == pytest.approx(2, abs=0.15)
        assert math.log2(a.err_v_h01 / b.err_v_h01) == pytest.approx(2, abs=0.15)
        assert math.log2(a.err_p_l2 / b.err_p_l2) == pytest.approx(2, abs=0.2)


def test_error_accumulator_combines_steps_as_specified():
    case = ManufacturedCase(Theta.SIN)
    hist, maps = _interpolant_history(case, 2, 3)
    acc = ErrorAccumulator(case, maps, 1 / 3)
    per_step = []
    for st in hist[1:]:
        acc(st)
        lu, hu = error_norms(st.u, maps[0], exact_u(case, st.t), gauss_rule(4))
        lp, _ = error_norms(st.p, maps[2], exact_p(case, st.t), gauss_rule(4))
        per_step.append((lu, hu, lp))
    rep = acc.report()
    lu, hu, lp = np.array(per_step).T
    assert rep.err_u_l2 == pytest.approx(lu.max())
    assert rep.err_u_h01 == pytest.approx(math.sqrt((hu**2).sum() / 3))
    assert rep.err_p_l2 == pytest.approx(math.sqrt((lp**2).sum() / 3))
    assert error_metrics(hist, case, maps).as_dict() == pytest.approx(rep.as_dict())
