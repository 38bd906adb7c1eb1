"""Monolithic semi-implicit solver for the coupled fluid / porous-solid system.

Each step solves one linear system for displacement ``u`` (vector Q2),
fluid velocity ``v`` (vector Q2) and pressure ``p`` (Q1), with the
constitutive weights frozen at the previous displacement:

    a/dt M u^n + K_B1 u^n / E1 + |E2|/E1 D_B2 u^n - a M v^n
        = a/dt M u^{n-1} + (f_s, z)
    (r/dt + a) M v^n + nu K v^n - B^T p^n - a/dt M u^n
        = r/dt M v^{n-1} - a/dt M u^{n-1} + (f_f, w)
    B v^n = 0

Dirichlet values are eliminated by lifting. When the velocity is
prescribed on the whole boundary the pressure is fixed by a Lagrange
multiplier enforcing zero mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from . import kernels
from .constitutive import ConstitutivePositivityError, MaterialParams, frozen_coefficients
from .fem.assembly import (
    BlockPattern,
    assemble_load,
    global_matrix,
    pressure_divergence,
    scalar_integrals,
    vector_operators,
)
from .fem.dofs import DofMap, build_dof_map, nodal_interpolate
from .fem.elements import ElementKind, gauss_rule
from .fem.fields import physical_points
from .linsolve import FactorizationError, make_factor
from .mesh import BoundaryTag, Mesh

log = logging.getLogger(__name__)

VectorField = Callable[[float, np.ndarray], np.ndarray]


class ViscousForm(str, Enum):
    GRAD_GRAD = "grad_grad"
    SYM_GRAD = "sym_grad"


class PressureGauge(str, Enum):
    ZERO_MEAN = "zero_mean"
    NONE = "none"


class SetupError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass
class ProblemSetup:
    """Everything that defines a run apart from the material parameters.

    ``dirichlet_u`` and ``dirichlet_v`` map boundary tags to prescribed
    values ``g(t, x) -> (P, 2)``; ``None`` means homogeneous. Tags absent
    from ``dirichlet_v`` carry the natural (traction-free) condition of the
    chosen viscous form.
    """

    mesh: Mesh
    dt: float
    N: int
    dirichlet_u: dict = field(default_factory=lambda: {t: None for t in BoundaryTag})
    dirichlet_v: dict = field(default_factory=lambda: {t: None for t in BoundaryTag})
    f_solid: VectorField | None = None
    f_fluid: VectorField | None = None
    viscous_form: ViscousForm = ViscousForm.GRAD_GRAD
    pressure_gauge: PressureGauge | None = None
    umap: DofMap = field(init=False, repr=False)
    vmap: DofMap = field(init=False, repr=False)
    pmap: DofMap = field(init=False, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise SetupError(f"time step must be positive, got {self.dt}")
        if self.N < 1:
            raise SetupError(f"step count must be >= 1, got {self.N}")
        self.viscous_form = ViscousForm(self.viscous_form)
        self.dirichlet_u = {BoundaryTag(k): v for k, v in self.dirichlet_u.items()}
        self.dirichlet_v = {BoundaryTag(k): v for k, v in self.dirichlet_v.items()}
        closed = set(self.dirichlet_v) == set(BoundaryTag)
        expected = PressureGauge.ZERO_MEAN if closed else PressureGauge.NONE
        if self.pressure_gauge is None:
            self.pressure_gauge = expected
        self.pressure_gauge = PressureGauge(self.pressure_gauge)
        if self.pressure_gauge is not expected:
            raise SetupError(
                f"pressure gauge {self.pressure_gauge.value!r} is inconsistent with the velocity "
                f"boundary conditions (expected {expected.value!r})"
            )
        self.umap = build_dof_map(self.mesh, ElementKind.Q2, 2)
        self.vmap = build_dof_map(self.mesh, ElementKind.Q2, 2)
        self.pmap = build_dof_map(self.mesh, ElementKind.Q1, 1)

    @property
    def T(self) -> float:
        return self.dt * self.N


@dataclass(frozen=True, eq=False)
class SystemState:
    n: int
    t: float
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for arr in (self.u, self.v, self.p):
            arr.setflags(write=False)


@dataclass
class StepDiagnostics:
    n: int
    t: float
    min_one_plus_l1t: float
    min_F: float
    max_abs_div_u_prev: float
    residual: float
    u_l2_sq: float
    v_l2_sq: float
    strain_l2_sq: float
    grad_v_l2_sq: float
    div_u_l2_sq: float
    div_v_norm: float
    averaged_pressure: np.ndarray = field(repr=False)


@dataclass(eq=False)
class StepSystem:
    """Full block system of one step together with its lifted reduction."""

    t: float
    matrix: sp.csr_matrix
    rhs: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    reduced_matrix: sp.csr_matrix
    reduced_rhs: np.ndarray
    min_one_plus_l1t: float
    min_F: float
    max_abs_div_u_prev: float


def _boundary_values(dofmap: DofMap, spec: dict, t: float):
    """Dirichlet dofs and values; for shared corner nodes the lowest tag wins."""
    values = {}
    for tag in sorted(spec, reverse=True):
        nodes = dofmap.boundary_nodes(tag)
        g = spec[tag]
        if g is None:
            vals = np.zeros((len(nodes), 2))
        else:
            vals = np.asarray(g(t, dofmap.node_coords[nodes]), dtype=float).reshape(len(nodes), 2)
        for node, val in zip(nodes.tolist(), vals):
            values[node] = val
    if not values:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    nodes = np.array(sorted(values), dtype=np.int64)
    vals = np.array([values[k] for k in nodes.tolist()])
    return dofmap.node_dofs(nodes), vals.ravel()


class CoupledSystem:
    """Pattern, constant operators and solver for one (setup, params) pair."""

    def __init__(self, setup: ProblemSetup, params: MaterialParams, backend: str | None = None):
        self.setup = setup
        self.factor = make_factor(backend)
        self.params = params
        um, vm, pm = setup.umap, setup.vmap, setup.pmap
        mesh = setup.mesh
        self.quad = gauss_rule(3)
        self.vops = vector_operators(um, self.quad)
        self.pdiv = pressure_divergence(pm, self.vops, self.quad)
        self.pint = scalar_integrals(pm, self.quad)

        self.n_u, self.n_v, self.n_p = um.n_dofs, vm.n_dofs, pm.n_dofs
        self.off_v = self.n_u
        self.off_p = self.n_u + self.n_v
        self.gauged = setup.pressure_gauge is PressureGauge.ZERO_MEAN
        self.n = self.off_p + self.n_p + (1 if self.gauged else 0)

        ud = um.cell_dofs.astype(np.int64)
        vd = vm.cell_dofs.astype(np.int64) + self.off_v
        pd = pm.cell_dofs.astype(np.int64) + self.off_p
        blocks = {"uu": (ud, ud), "uv": (ud, vd), "vu": (vd, ud), "vv": (vd, vd), "vp": (vd, pd), "pv": (pd, vd)}
        if self.gauged:
            mult = np.full((mesh.n_cells, 1), self.n - 1, dtype=np.int64)
            blocks["pm"] = (pd, mult)
            blocks["mp"] = (mult, pd)
        self.pattern = BlockPattern(self.n, blocks)

        p = params
        dt = setup.dt
        M = self.vops.mass.sum(axis=0)
        if setup.viscous_form is ViscousForm.GRAD_GRAD:
            K = self.vops.grad_grad.sum(axis=0)
        else:
            K = 2.0 * self.vops.eps_eps.sum(axis=0)
        Bloc = self.pdiv.sum(axis=0)  # (n_q_loc, n_v_loc)
        base = self.pattern.zeros()
        pat = self.pattern
        pat.add_constant(base, "uu", M, p.alpha / dt)
        pat.add_constant(base, "uv", M, -p.alpha)
        pat.add_constant(base, "vu", M, -p.alpha / dt)
        pat.add_constant(base, "vv", M, p.rho / dt + p.alpha)
        pat.add_constant(base, "vv", K, p.nu)
        pat.add_constant(base, "vp", Bloc.T, -1.0)
        pat.add_constant(base, "pv", Bloc, 1.0)
        if self.gauged:
            q = self.pint.sum(axis=0)
            pat.add_constant(base, "pm", q[:, None])
            pat.add_constant(base, "mp", q[None, :])
        self.base_data = base
        self.constitutive_ref = np.concatenate([self.vops.eps_eps, self.vops.div_div])

        self.mass_u = global_matrix(um, um, M)
        self.div_matrix = global_matrix(pm, vm, Bloc)
        self.qp_points = physical_points(mesh, self.quad.points)

        # every Dirichlet set is time independent; only values change
        fixed_u, _ = _boundary_values(um, setup.dirichlet_u, 0.0)
        fixed_v, _ = _boundary_values(vm, setup.dirichlet_v, 0.0)
        self.fixed = np.concatenate([fixed_u, fixed_v + self.off_v])
        is_free = np.ones(self.n, dtype=bool)
        is_free[self.fixed] = False
        self.free = np.flatnonzero(is_free)
        probe = self.pattern.matrix(np.arange(1, self.pattern.nnz + 1, dtype=np.float64))
        ff = probe[self.free][:, self.free].tocsr()
        ff.sort_indices()
        fd = probe[self.free][:, self.fixed].tocsr()
        fd.sort_indices()
        self._ff_struct = (ff.indices.copy(), ff.indptr.copy(), ff.shape)
        self._ff_sel = ff.data.astype(np.int64) - 1
        self._fd_struct = (fd.indices.copy(), fd.indptr.copy(), fd.shape)
        self._fd_sel = fd.data.astype(np.int64) - 1

        if mesh.h**2 > dt:
            log.warning("h^2 = %.3g exceeds dt = %.3g; stability constants may depend on h", mesh.h**2, dt)

    def divergence_at_qp(self, u: np.ndarray) -> np.ndarray:
        return kernels.cell_apply(u, self.setup.umap.cell_dofs, self.vops.div)

    def frozen(self, u_prev: np.ndarray):
        div = self.divergence_at_qp(u_prev)
        a, F, B1, B2 = frozen_coefficients(div, self.params)
        bad = (a <= 0) | (F <= 0)
        if np.any(bad):
            cell, q = np.unravel_index(int(np.flatnonzero(bad)[0]), bad.shape)
            val = float(min(a[cell, q], F[cell, q]))
            raise ConstitutivePositivityError(
                f"constitutive coefficient {val:.6g} <= 0 in cell {cell} "
                f"(lambda1={self.params.lambda1}, lambda2={self.params.lambda2})",
                cell=int(cell),
                value=val,
            )
        return div, a, F, B1, B2

    def _load(self, f: VectorField | None, t: float, dofmap: DofMap, out: np.ndarray):
        if f is None:
            return
        vals = np.asarray(f(t, self.qp_points.reshape(-1, 2)), dtype=float)
        assemble_load(dofmap, self.vops, vals.reshape(self.qp_points.shape), out=out)

    def assemble(self, prev: SystemState) -> StepSystem:
        s, p = self.setup, self.params
        dt = s.dt
        t = (prev.n + 1) * dt
        div, a, F, B1, B2 = self.frozen(prev.u)
        coef = np.concatenate([B1 / p.E1, B2 * (abs(p.E2) / p.E1)], axis=1)
        data = self.base_data.copy()
        self.pattern.add_weighted(data, "uu", coef, self.constitutive_ref)
        A = self.pattern.matrix(data)

        b = np.zeros(self.n)
        Mu = self.mass_u @ prev.u
        Mv = self.mass_u @ prev.v
        bu = b[: self.n_u]
        bv = b[self.off_v : self.off_p]
        bu += (p.alpha / dt) * Mu
        bv += (p.rho / dt) * Mv - (p.alpha / dt) * Mu
        self._load(s.f_solid, t, s.umap, bu)
        self._load(s.f_fluid, t, s.vmap, bv)

        _, gu = _boundary_values(s.umap, s.dirichlet_u, t)
        _, gv = _boundary_values(s.vmap, s.dirichlet_v, t)
        g = np.concatenate([gu, gv])
        Aff = sp.csr_matrix((data[self._ff_sel], *self._ff_struct[:2]), shape=self._ff_struct[2])
        Afd = sp.csr_matrix((data[self._fd_sel], *self._fd_struct[:2]), shape=self._fd_struct[2])
        bf = b[self.free] - Afd @ g
        return StepSystem(
            t=t,
            matrix=A,
            rhs=b,
            fixed=self.fixed,
            fixed_values=g,
            reduced_matrix=Aff,
            reduced_rhs=bf,
            min_one_plus_l1t=float(a.min()),
            min_F=float(F.min()),
            max_abs_div_u_prev=float(np.abs(div).max()),
        )

    def solve(self, system: StepSystem, n: int, tol: float = 1e-10):
        A = system.reduced_matrix
        b = system.reduced_rhs
        x = np.zeros(self.n)
        x[self.fixed] = system.fixed_values
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            rel = 0.0
        else:
            try:
                self.factor.factorize(A)
                xf = self.factor.solve(b)
            except FactorizationError as exc:
                raise SolverError(
                    f"singular step matrix ({exc}); check the pressure gauge and boundary conditions"
                ) from exc
            rel = np.linalg.norm(A @ xf - b) / bnorm
            if not np.isfinite(rel) or rel > tol:
                raise SolverError(f"linear solve residual {rel:.3e} exceeds {tol:.1e}")
            x[self.free] = xf
        state = SystemState(
            n=n,
            t=system.t,
            u=x[: self.n_u].copy(),
            v=x[self.off_v : self.off_p].copy(),
            p=x[self.off_p : self.off_p + self.n_p].copy(),
        )
        multiplier = float(x[-1]) if self.gauged else 0.0
        return state, rel, multiplier

    def pack(self, state: SystemState, multiplier: float = 0.0) -> np.ndarray:
        parts = [state.u, state.v, state.p]
        if self.gauged:
            parts.append([multiplier])
        return np.concatenate(parts)

    def residual(self, state: SystemState, prev: SystemState, multiplier: float | None = None) -> float:
        """Relative residual of the discrete equations at ``state``.

        Free rows use the reassembled system; prescribed rows measure the
        mismatch with the boundary data. When the pressure multiplier is not
        given it is recovered by least squares from the pressure rows.
        """
        system = self.assemble(prev)
        A, b = system.matrix, system.rhs
        x = self.pack(state, 0.0)
        if self.gauged and multiplier is None:
            col = A[:, self.n - 1].toarray().ravel()
            r0 = A @ x - b
            rows = self.free
            c = col[rows]
            multiplier = -float(c @ r0[rows]) / float(c @ c) if c @ c > 0 else 0.0
        if self.gauged:
            x[-1] = multiplier
        r = (A @ x - b)[self.free]
        r_fixed = x[self.fixed] - system.fixed_values
        scale = max(np.linalg.norm(b[self.free]), np.linalg.norm(system.reduced_rhs))
        total = float(np.sqrt(r @ r + r_fixed @ r_fixed))
        return total / scale if scale > 0 else total

    def energies(self, state: SystemState):
        """Squared L2 norms of u, v, eps(u), grad v, div u and |B v|."""
        um = self.setup.umap
        w = self.vops.weights
        nl = self.vops.phi.shape[1]
        phi = self.vops.phi.transpose(0, 2, 1).reshape(-1, nl)  # (P*2, nloc)
        gphi = self.vops.gphi.transpose(0, 2, 3, 1).reshape(-1, nl)  # (P*4, nloc)
        P = len(w)

        def l2(vals, ncomp):
            return float(np.einsum("cpk,p->", vals.reshape(-1, P, ncomp) ** 2, w))

        uv = kernels.cell_apply(state.u, um.cell_dofs, phi)
        vv = kernels.cell_apply(state.v, um.cell_dofs, phi)
        gu = kernels.cell_apply(state.u, um.cell_dofs, gphi).reshape(-1, P, 2, 2)
        gv = kernels.cell_apply(state.v, um.cell_dofs, gphi).reshape(-1, P, 2, 2)
        eps = 0.5 * (gu + np.swapaxes(gu, -1, -2))
        div = np.trace(gu, axis1=-2, axis2=-1)
        return {
            "u_l2_sq": l2(uv, 2),
            "v_l2_sq": l2(vv, 2),
            "strain_l2_sq": l2(eps, 4),
            "grad_v_l2_sq": l2(gv, 4),
            "div_u_l2_sq": l2(div, 1),
            "div_v_norm": float(np.linalg.norm(self.div_matrix @ state.v)),
        }


def interpolate_initial(setup: ProblemSetup, u0=None, v0=None) -> SystemState:
    """State at ``n = 0``: nodal interpolants of ``u0``/``v0`` (zero when None), p = 0."""
    u = nodal_interpolate(0.0 if u0 is None else u0, setup.umap)
    v = nodal_interpolate(0.0 if v0 is None else v0, setup.vmap)
    return SystemState(0, 0.0, u, v, np.zeros(setup.pmap.n_dofs))


def assemble_step(prev: SystemState, setup: ProblemSetup, params: MaterialParams,
                  system: CoupledSystem | None = None) -> StepSystem:
    system = system or CoupledSystem(setup, params)
    return system.assemble(prev)


def solve_step(step: StepSystem, system: CoupledSystem, n: int | None = None) -> SystemState:
    state, _, _ = system.solve(step, n if n is not None else int(round(step.t / system.setup.dt)))
    return state


def residual_check(state: SystemState, prev: SystemState, setup: ProblemSetup,
                   params: MaterialParams, system: CoupledSystem | None = None) -> float:
    system = system or CoupledSystem(setup, params)
    return system.residual(state, prev)


@dataclass
class RunResult:
    final: SystemState
    history: list
    diagnostics: list


def time_loop(setup: ProblemSetup, params: MaterialParams, initial: SystemState | None = None,
              callbacks: Iterable[Callable] = (), keep_history: bool = True,
              check_residual: bool = False, backend: str | None = None) -> RunResult:
    """Advance ``setup.N`` steps; each callback is called as ``cb(state, diag)``.

    ``check_residual`` re-verifies every step against a fresh assembly,
    which roughly doubles the cost of a run.
    """
    system = CoupledSystem(setup, params, backend)
    state = initial if initial is not None else interpolate_initial(setup)
    history = [state] if keep_history else []
    diagnostics = []
    P = np.zeros(setup.pmap.n_dofs)
    callbacks = list(callbacks)
    for n in range(1, setup.N + 1):
        step = system.assemble(state)
        new, rel, mult = system.solve(step, n)
        residual = system.residual(new, state, mult) if check_residual else rel
        P = P + setup.dt * new.p
        diag = StepDiagnostics(
            n=n,
            t=new.t,
            min_one_plus_l1t=step.min_one_plus_l1t,
            min_F=step.min_F,
            max_abs_div_u_prev=step.max_abs_div_u_prev,
            residual=residual,
            averaged_pressure=P.copy(),
            **system.energies(new),
        )
        log.debug("step %d t=%.4f residual=%.2e min F=%.4g", n, new.t, residual, step.min_F)
        for cb in callbacks:
            cb(new, diag)
        if keep_history:
            history.append(new)
        diagnostics.append(diag)
        state = new
    system.factor.close()
    return RunResult(state, history, diagnostics)
