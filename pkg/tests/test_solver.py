import logging

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from porofem.constitutive import ConstitutivePositivityError, MaterialParams, validate_smallness
from porofem.experiments import manufactured_setup
from porofem.fem import error_norms, gauss_rule
from porofem.fem.assembly import scalar_integrals
from porofem.fem.norms import l2_norm_squared
from porofem.linsolve import available_backends, make_factor
from porofem.manufactured import ManufacturedCase, Theta, exact_fields, manufactured_params
from porofem.mesh import BoundaryTag, build_rect_mesh, unit_square_mesh, UNIT_SQUARE
from porofem.solver import (
    CoupledSystem,
    PressureGauge,
    ProblemSetup,
    SetupError,
    SystemState,
    ViscousForm,
    assemble_step,
    interpolate_initial,
    residual_check,
    solve_step,
    time_loop,
)

ALL_ZERO = {tag: None for tag in BoundaryTag}


def closed_setup(mesh, N=1, dt=0.1, form=ViscousForm.GRAD_GRAD):
    return ProblemSetup(mesh, dt=dt, N=N, dirichlet_u=dict(ALL_ZERO), dirichlet_v=dict(ALL_ZERO),
                        f_solid=None, f_fluid=None, viscous_form=form)


def bubble(a):
    def f(x):
        X, Y = x[:, 0], x[:, 1]
        b = X * (1 - X) * Y * (1 - Y)
        return np.column_stack([b * (a[0] + a[1] * X), b * (a[2] + a[3] * Y * Y)])
    return f


def random_admissible(rng, count):
    out = []
    while len(out) < count:
        E1 = rng.uniform(0.2, 2.0)
        p = MaterialParams(alpha=rng.uniform(0.1, 5), nu=rng.uniform(0.05, 2), rho=rng.uniform(0.5, 2),
                           E1=E1, E2=-rng.uniform(0.01, 0.45) * E1,
                           lambda1=rng.uniform(-2, 2), lambda2=rng.uniform(-2, 2), delta=rng.uniform(0.05, 0.4))
        if validate_smallness(p).admissible:
            out.append(p)
    return out


def test_gauge_is_inferred_and_checked():
    s = closed_setup(unit_square_mesh(1))
    assert s.pressure_gauge is PressureGauge.ZERO_MEAN
    open_v = {BoundaryTag.GAMMA1: None, BoundaryTag.GAMMA3: None}
    s2 = ProblemSetup(unit_square_mesh(1), 0.1, 1, dict(ALL_ZERO), open_v, None, None)
    assert s2.pressure_gauge is PressureGauge.NONE
    with pytest.raises(SetupError):
        ProblemSetup(unit_square_mesh(1), 0.1, 1, dict(ALL_ZERO), dict(ALL_ZERO), None, None,
                     pressure_gauge=PressureGauge.NONE)
    with pytest.raises(SetupError):
        ProblemSetup(unit_square_mesh(1), 0.0, 1, dict(ALL_ZERO), dict(ALL_ZERO), None, None)


def test_interpolate_initial_examples():
    s = closed_setup(unit_square_mesh(4))
    z = interpolate_initial(s)
    assert z.n == 0 and not z.u.any() and not z.v.any() and not z.p.any()
    sin_case = ManufacturedCase(Theta.SIN)
    st = interpolate_initial(s, lambda x: exact_fields(sin_case, 0, x).u, lambda x: exact_fields(sin_case, 0, x).v)
    assert np.abs(st.u).max() == 0 and np.abs(st.v).max() == 0
    exp_case = ManufacturedCase(Theta.EXP)
    st = interpolate_initial(s, None, lambda x: exact_fields(exp_case, 0, x).v)
    node = int(np.flatnonzero(np.all(np.abs(s.vmap.node_coords - [0.25, 0]) < 1e-14, axis=1))[0])
    np.testing.assert_allclose(st.v[2 * node:2 * node + 2], [1, 0], atol=1e-14)
    with pytest.raises(ValueError):
        st.u[0] = 1.0


def test_linear_model_blocks_do_not_depend_on_previous_state(rng):
    s = closed_setup(unit_square_mesh(2))
    p = manufactured_params(lambda1=0.0, lambda2=0.0)
    sys = CoupledSystem(s, p)
    a = sys.assemble(interpolate_initial(s))
    b = sys.assemble(interpolate_initial(s, bubble(rng.normal(size=4)), bubble(rng.normal(size=4))))
    assert (a.matrix != b.matrix).nnz == 0


def test_nonlinear_blocks_do_depend_on_previous_state(rng):
    s = closed_setup(unit_square_mesh(2))
    sys = CoupledSystem(s, manufactured_params())
    a = sys.assemble(interpolate_initial(s))
    b = sys.assemble(interpolate_initial(s, bubble(rng.normal(size=4))))
    assert abs(a.matrix - b.matrix).max() > 1e-6


def test_block_symmetry_and_skew_pairing(rng):
    s = closed_setup(unit_square_mesh(2), form=ViscousForm.SYM_GRAD)
    sys = CoupledSystem(s, manufactured_params())
    A = sys.assemble(interpolate_initial(s, bubble(rng.normal(size=4)))).matrix.toarray()
    nu, nv, npr = sys.n_u, sys.n_v, sys.n_p
    U, V, Pp = slice(0, nu), slice(nu, nu + nv), slice(nu + nv, nu + nv + npr)
    np.testing.assert_allclose(A[U, U], A[U, U].T, atol=1e-12)
    np.testing.assert_allclose(A[V, V], A[V, V].T, atol=1e-12)
    np.testing.assert_allclose(A[V, Pp], -A[Pp, V].T, atol=1e-14)
    # u/v coupling blocks are multiples of the same mass matrix
    np.testing.assert_allclose(A[U, V] * (1 / s.dt), A[V, U], atol=1e-14)


def test_one_cell_all_dirichlet_zero_data_gives_zero():
    s = closed_setup(build_rect_mesh(UNIT_SQUARE, 1, 1))
    res = time_loop(s, manufactured_params())
    st = res.final
    assert not st.u.any() and not st.v.any() and not st.p.any()


def test_uniqueness_on_random_admissible_parameters(rng):
    """Zero data and homogeneous BCs: the reduced step matrix is nonsingular,
    so the only solution is zero; the coefficients are frozen at a nonzero
    previous displacement so that they actually vary in space."""
    s = closed_setup(unit_square_mesh(2))
    for p in random_admissible(rng, 20):
        sys = CoupledSystem(s, p, backend="superlu")
        prev = interpolate_initial(s, bubble(rng.normal(scale=5, size=4)))
        step = sys.assemble(prev)
        A = step.reduced_matrix.toarray()
        sv = np.linalg.svd(A, compute_uv=False)
        assert sv[-1] > 1e-10 * sv[0]
        x = spla.spsolve(step.reduced_matrix.tocsc(), np.zeros(A.shape[0]))
        assert np.abs(x).max() <= 1e-10


def test_solve_round_trip_random_vector(rng):
    s = closed_setup(unit_square_mesh(3))
    sys = CoupledSystem(s, manufactured_params())
    A = sys.assemble(interpolate_initial(s)).reduced_matrix
    x0 = rng.normal(size=A.shape[0])
    for backend in available_backends():
        f = make_factor(backend)
        f.factorize(A)
        np.testing.assert_allclose(f.solve(A @ x0), x0, atol=1e-10 * np.abs(x0).max())
        f.close()


def test_zero_rhs_homogeneous_gives_zero_state():
    s = closed_setup(unit_square_mesh(2))
    sys = CoupledSystem(s, manufactured_params())
    step = assemble_step(interpolate_initial(s), s, manufactured_params(), sys)
    st = solve_step(step, sys, 1)
    assert st.n == 1 and st.t == pytest.approx(0.1)
    assert not st.u.any() and not st.v.any() and not st.p.any()


@pytest.fixture(scope="module")
def manufactured_run():
    case = ManufacturedCase(Theta.EXP)
    s = manufactured_setup(3, 4, case)
    init = interpolate_initial(s, lambda x: exact_fields(case, 0, x).u, lambda x: exact_fields(case, 0, x).v)
    res = time_loop(s, case.params, init, check_residual=True)
    return case, s, res


def test_residual_of_every_step(manufactured_run):
    _, s, res = manufactured_run
    assert len(res.history) == s.N + 1
    for d in res.diagnostics:
        assert d.residual <= 1e-9
        assert d.div_v_norm <= 1e-9
        assert d.min_one_plus_l1t > 0 and d.min_F > 0


def test_residual_detects_perturbation(manufactured_run):
    case, s, res = manufactured_run
    prev, st = res.history[1], res.history[2]
    assert residual_check(st, prev, s, case.params) <= 1e-9
    free_u = np.setdiff1d(np.arange(s.umap.n_dofs), CoupledSystem(s, case.params).fixed)
    u = st.u.copy()
    u[free_u[len(free_u) // 2]] += 1e-3
    bad = SystemState(st.n, st.t, u, st.v.copy(), st.p.copy())
    assert residual_check(bad, prev, s, case.params) > 1e-6


def test_residual_zero_state_zero_data():
    s = closed_setup(unit_square_mesh(2))
    z = interpolate_initial(s)
    z1 = SystemState(1, s.dt, z.u.copy(), z.v.copy(), z.p.copy())
    assert residual_check(z1, z, s, manufactured_params()) == 0.0


def test_averaged_pressure_accumulates(manufactured_run):
    _, s, res = manufactured_run
    P = np.zeros(s.pmap.n_dofs)
    for st, d in zip(res.history[1:], res.diagnostics):
        P = P + s.dt * st.p
        np.testing.assert_allclose(d.averaged_pressure, P, rtol=1e-14, atol=1e-15)


def test_pressure_has_zero_mean(manufactured_run):
    _, s, res = manufactured_run
    q = scalar_integrals(s.pmap, gauss_rule(3)).sum(axis=0)
    for st in res.history[1:]:
        mean = np.bincount(s.pmap.cell_dofs.ravel(), weights=np.broadcast_to(q, s.pmap.cell_dofs.shape).ravel(),
                           minlength=s.pmap.n_dofs) @ st.p
        assert abs(mean) < 1e-12


def test_dirichlet_values_hold_at_t_n(manufactured_run):
    case, s, res = manufactured_run
    st = res.final
    nodes = s.umap.boundary_nodes(BoundaryTag.GAMMA2)
    ex = exact_fields(case, st.t, s.umap.node_coords[nodes])
    np.testing.assert_allclose(st.u.reshape(-1, 2)[nodes], ex.u, atol=1e-15)
    np.testing.assert_allclose(st.v.reshape(-1, 2)[nodes], ex.v, atol=1e-15)


def test_energy_diagnostics_match_direct_norms(manufactured_run):
    _, s, res = manufactured_run
    st, d = res.final, res.diagnostics[-1]

    def zero(x):
        return np.zeros((len(x), 2)), np.zeros((len(x), 2, 2))

    l2, h1 = error_norms(st.v, s.vmap, zero)
    assert d.v_l2_sq == pytest.approx(l2**2, rel=1e-10)
    assert d.grad_v_l2_sq == pytest.approx(h1**2, rel=1e-10)


def test_single_step_equals_assemble_plus_solve():
    case = ManufacturedCase(Theta.SIN)
    s = manufactured_setup(2, 1, case)
    res = time_loop(s, case.params)
    sys = CoupledSystem(s, case.params)
    st = solve_step(sys.assemble(interpolate_initial(s)), sys, 1)
    np.testing.assert_array_equal(res.final.u, st.u)
    np.testing.assert_array_equal(res.final.p, st.p)


def test_zero_data_run_has_zero_diagnostics():
    res = time_loop(closed_setup(unit_square_mesh(2), N=3), manufactured_params())
    for d in res.diagnostics:
        assert d.u_l2_sq == d.v_l2_sq == d.strain_l2_sq == d.grad_v_l2_sq == d.div_u_l2_sq == 0
        assert d.residual == 0 and d.max_abs_div_u_prev == 0
        assert not d.averaged_pressure.any()


@pytest.mark.parametrize("form", list(ViscousForm))
def test_unforced_velocity_norm_is_non_increasing(rng, form):
    for _ in range(3):
        s = closed_setup(unit_square_mesh(3), N=15, dt=0.05, form=form)
        init = interpolate_initial(s, bubble(rng.normal(scale=0.2, size=4)), bubble(rng.normal(size=4)))
        res = time_loop(s, manufactured_params(), init)
        norms = [np.sqrt(l2_norm_squared(init.v, s.vmap))] + [np.sqrt(d.v_l2_sq) for d in res.diagnostics]
        assert norms[0] > 0
        assert np.all(np.diff(norms) <= 1e-10)


def test_positivity_failure_names_cell():
    p = MaterialParams(lambda1=5.0, lambda2=5.0, delta=10.0)
    s = closed_setup(unit_square_mesh(2))

    def compress(x):
        return -0.5 * x

    sys = CoupledSystem(s, p)
    with pytest.raises(ConstitutivePositivityError) as info:
        sys.assemble(interpolate_initial(s, compress))
    assert info.value.cell is not None and info.value.value <= 0
    assert "cell" in str(info.value)


def test_coarse_step_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="porofem.solver"):
        CoupledSystem(closed_setup(unit_square_mesh(1), dt=0.01), manufactured_params())
    assert any("exceeds dt" in r.message for r in caplog.records)


@pytest.mark.skipif(len(available_backends()) < 2, reason="needs both solver backends")
def test_solver_backends_agree():
    case = ManufacturedCase(Theta.EXP)
    s = manufactured_setup(2, 2, case)
    a = time_loop(s, case.params, backend="pardiso").final
    b = time_loop(s, case.params, backend="superlu").final
    np.testing.assert_allclose(a.u, b.u, atol=1e-12)
    np.testing.assert_allclose(a.p, b.p, atol=1e-9)
