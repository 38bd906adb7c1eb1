"""Convergence studies on the manufactured solution and the strain study
on the rectangular practical problem."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import manufactured as mf
from .constitutive import MaterialParams
from .fem.dofs import DofMap
from .fem.elements import gauss_rule, reference_element
from .fem.fields import evaluate, strain_from_grad
from .mesh import BoundaryTag, Rectangle, build_rect_mesh, unit_square_mesh
from .solver import ProblemSetup, SystemState, ViscousForm, interpolate_initial, time_loop

log = logging.getLogger(__name__)

TABLE3_DT_FACTOR = 12.8


@dataclass
class ConvergenceConfig:
    theta: mf.Theta = mf.Theta.EXP
    rows: list = field(default_factory=lambda: [(4, 10), (5, 40), (6, 160)])
    params: MaterialParams = field(default_factory=mf.manufactured_params)
    T: float = 1.0
    viscous_form: ViscousForm = ViscousForm.GRAD_GRAD
    backend: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.theta = mf.Theta(self.theta)
        self.rows = [(int(m), int(N)) for m, N in self.rows]
        for m, N in self.rows:
            if m < 1 or N < 1:
                raise ValueError(f"invalid (m, N) pair ({m}, {N})")


def coupled_rows(levels, c: float = TABLE3_DT_FACTOR, T: float = 1.0):
    """(m, N) pairs with dt = c h^2 and h = sqrt(2) 2^-m."""
    rows = []
    for m in levels:
        dt = c * 2.0 * 4.0 ** (-m)
        rows.append((m, int(round(T / dt))))
    return rows


@dataclass
class ConvergenceRow:
    m: int
    N: int
    errors: mf.ErrorReport | None
    max_abs_div_u: float = float("nan")
    max_residual: float = float("nan")
    min_coefficient: float = float("nan")
    seconds: float = 0.0
    failure: str | None = None

    @property
    def h(self) -> float:
        return math.sqrt(2.0) * 2.0 ** (-self.m)


@dataclass
class ConvergenceReport:
    theta: mf.Theta
    rows: list
    rates: list


def manufactured_setup(m: int, N: int, case: mf.ManufacturedCase, T: float = 1.0,
                       viscous_form=ViscousForm.GRAD_GRAD) -> ProblemSetup:
    du, dv = mf.dirichlet_data(case)
    return ProblemSetup(
        unit_square_mesh(m),
        dt=T / N,
        N=N,
        dirichlet_u=du,
        dirichlet_v=dv,
        f_solid=lambda t, x: mf.forcing_solid(case, t, x),
        f_fluid=lambda t, x: mf.forcing_fluid(case, t, x),
        viscous_form=viscous_form,
    )


def run_manufactured(m: int, N: int, theta, params: MaterialParams | None = None, T: float = 1.0,
                     viscous_form=ViscousForm.GRAD_GRAD, backend=None, callbacks=()) -> ConvergenceRow:
    case = mf.ManufacturedCase(mf.Theta(theta), params or mf.manufactured_params())
    setup = manufactured_setup(m, N, case, T, viscous_form)
    init = interpolate_initial(
        setup,
        lambda x: mf.exact_fields(case, 0.0, x).u,
        lambda x: mf.exact_fields(case, 0.0, x).v,
    )
    acc = mf.ErrorAccumulator(case, (setup.umap, setup.vmap, setup.pmap), setup.dt)
    start = time.perf_counter()
    res = time_loop(setup, case.params, init, [acc, *callbacks], keep_history=False, backend=backend)
    diags = res.diagnostics
    return ConvergenceRow(
        m=m,
        N=N,
        errors=acc.report(),
        max_abs_div_u=max(d.max_abs_div_u_prev for d in diags),
        max_residual=max(d.residual for d in diags),
        min_coefficient=min(min(d.min_one_plus_l1t, d.min_F) for d in diags),
        seconds=time.perf_counter() - start,
    )


def _run_row(args):
    m, N, config = args
    try:
        return run_manufactured(m, N, config.theta, config.params, config.T,
                                config.viscous_form, config.backend)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        log.error("row (m=%d, N=%d) failed: %s", m, N, exc)
        return ConvergenceRow(m, N, None, failure=f"{type(exc).__name__}: {exc}")


def compute_rates(rows, columns=mf.ErrorReport.COLUMNS):
    """Observed orders between successive rows, log(e_coarse/e_fine)/log(h_coarse/h_fine).

    A rate is ``None`` when either error is missing or not positive.
    """
    rates = []
    for coarse, fine in zip(rows, rows[1:]):
        entry = {"m_coarse": coarse.m, "m_fine": fine.m}
        for col in columns:
            ec = getattr(coarse.errors, col, None) if coarse.errors else None
            ef = getattr(fine.errors, col, None) if fine.errors else None
            if ec is None or ef is None or ec <= 0 or ef <= 0 or coarse.h == fine.h:
                entry[col] = None
            else:
                entry[col] = math.log(ec / ef) / math.log(coarse.h / fine.h)
        rates.append(entry)
    return rates


def _cache_key(m, N, config):
    return (m, N, config.theta, config.params, config.T, ViscousForm(config.viscous_form), config.backend)


def convergence_study(config: ConvergenceConfig, cache: dict | None = None) -> ConvergenceReport:
    """Run every (m, N) row of ``config``.

    ``cache`` maps run keys to finished rows, so studies sharing rows (the
    coupled-rate study reuses table rows) only compute each once.
    """
    cache = {} if cache is None else cache
    todo = [(m, N, config) for m, N in config.rows if _cache_key(m, N, config) not in cache]
    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            done = list(pool.map(_run_row, todo))
    else:
        done = [_run_row(j) for j in todo]
    for (m, N, _), row in zip(todo, done):
        if row.failure is None:
            cache[_cache_key(m, N, config)] = row
    fresh = {(r.m, r.N): r for r in done}
    rows = [cache.get(_cache_key(m, N, config)) or fresh[(m, N)] for m, N in config.rows]
    for r in rows:
        if r.errors:
            log.info("theta=%s m=%d N=%d %s (%.1fs)", config.theta.value, r.m, r.N, r.errors, r.seconds)
    return ConvergenceReport(config.theta, rows, compute_rates(rows))


def practical_params(lam: float = 0.0, **overrides) -> MaterialParams:
    base = dict(alpha=1.0, nu=0.1, rho=1.0, rho_s=2.0, E1=1.0 / 8.0, E2=-3.0 / 64.0,
                lambda1=lam, lambda2=lam, delta=10.0)
    base.update(overrides)
    return MaterialParams(**base)


@dataclass
class PracticalConfig:
    domain: Rectangle = Rectangle(0.0, 2.0, 0.0, 1.0)
    nx: int = 128
    ny: int = 64
    dt: float = 0.1
    T: float = 1.0
    lambdas: tuple = (0, 1, 2, 3, 4, 5)
    params: MaterialParams = field(default_factory=practical_params)
    viscous_form: ViscousForm = ViscousForm.SYM_GRAD
    backend: str | None = None

    @property
    def N(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class PracticalResult:
    lam: float
    times: list
    strain: list
    final: SystemState
    diagnostics: list
    setup: ProblemSetup


def practical_setup(config: PracticalConfig) -> ProblemSetup:
    params = config.params
    mesh = build_rect_mesh(config.domain, config.nx, config.ny)
    body = np.array([0.0, -1.0])

    def bottom_displacement(t, x):
        return np.column_stack([np.zeros(len(x)), -np.sin(0.5 * np.pi * x[:, 0])])

    def solid_force(t, x):
        return np.broadcast_to(params.rho_s * body, (len(x), 2))

    def fluid_force(t, x):
        return np.broadcast_to(params.rho * body, (len(x), 2))

    return ProblemSetup(
        mesh,
        dt=config.dt,
        N=config.N,
        dirichlet_u={
            BoundaryTag.GAMMA1: bottom_displacement,
            BoundaryTag.GAMMA2: None,
            BoundaryTag.GAMMA3: None,
            BoundaryTag.GAMMA4: None,
        },
        dirichlet_v={BoundaryTag.GAMMA1: None, BoundaryTag.GAMMA3: None},
        f_solid=solid_force,
        f_fluid=fluid_force,
        viscous_form=config.viscous_form,
    )


def practical_problem(config: PracticalConfig, lam: float, callbacks=()) -> PracticalResult:
    params = replace(config.params, lambda1=float(lam), lambda2=float(lam))
    setup = practical_setup(replace(config, params=params))
    times, strain = [], []

    def record(state, diag):
        times.append(state.t)
        strain.append(strain_linf(state.u, setup.umap))

    res = time_loop(setup, params, None, [record, *callbacks], keep_history=False,
                    backend=config.backend)
    return PracticalResult(float(lam), times, strain, res.final, res.diagnostics, setup)


def strain_sample_points() -> np.ndarray:
    """Reference points where the strain is sampled: 3x3 Gauss points and Q2 nodes."""
    return np.vstack([gauss_rule(3).points, reference_element("Q2").node_coords])


def strain_linf(u: np.ndarray, dofmap: DofMap) -> float:
    """Maximum Frobenius norm of eps(u_h) over the per-cell sample points."""
    _, g = evaluate(u, dofmap, strain_sample_points(), with_values=False)
    eps = strain_from_grad(g)
    return float(np.sqrt((eps**2).sum(axis=(-1, -2))).max())
