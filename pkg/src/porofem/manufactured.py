"""Closed-form manufactured solution on the unit square and its forcing terms.

    u = theta(t)/100 (cos 2pi x sin 2pi y, sin 2pi x cos 2pi y)
    v = theta(t) (sin 2pi x cos 2pi y, -cos 2pi x sin 2pi y)
    p = theta(t) (60 x^2 y - 20 y^3 - 5)

with theta = exp(-t) or sin(3 pi t). The fluid forcing is the strong
residual of the momentum equation in closed form. The solid forcing needs
div T of the nonlinear stress; it is computed by central differences of the
pointwise-exact stress field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .constitutive import MaterialParams, stress
from .fem.dofs import DofMap
from .fem.elements import gauss_rule
from .fem.norms import error_norms
from .mesh import BoundaryTag

TWO_PI = 2.0 * np.pi


class Theta(str, Enum):
    EXP = "exp"
    SIN = "sin"

    def value_at(self, t: float) -> float:
        return float(np.exp(-t)) if self is Theta.EXP else float(np.sin(3 * np.pi * t))

    def derivative_at(self, t: float) -> float:
        return float(-np.exp(-t)) if self is Theta.EXP else float(3 * np.pi * np.cos(3 * np.pi * t))


def manufactured_params(**overrides) -> MaterialParams:
    base = dict(alpha=1.0, nu=1.0, rho=1.0, rho_s=0.0, E1=1.0, E2=-0.2,
                lambda1=2.0, lambda2=2.0, delta=0.4)
    base.update(overrides)
    return MaterialParams(**base)


@dataclass(frozen=True)
class ManufacturedCase:
    theta: Theta = Theta.EXP
    params: MaterialParams = field(default_factory=manufactured_params)
    fd_step: float = 1e-5


@dataclass(frozen=True)
class ExactFields:
    u: np.ndarray
    grad_u: np.ndarray
    v: np.ndarray
    grad_v: np.ndarray
    p: np.ndarray
    grad_p: np.ndarray
    du_dt: np.ndarray
    dv_dt: np.ndarray


def _trig(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, b = TWO_PI * x[:, 0], TWO_PI * x[:, 1]
    return x, np.sin(a), np.cos(a), np.sin(b), np.cos(b)


def _u_shape(x):
    x, sx, cx, sy, cy = _trig(x)
    u = np.column_stack([cx * sy, sx * cy]) / 100.0
    g = np.empty((len(x), 2, 2))
    g[:, 0, 0] = -TWO_PI * sx * sy
    g[:, 0, 1] = TWO_PI * cx * cy
    g[:, 1, 0] = TWO_PI * cx * cy
    g[:, 1, 1] = -TWO_PI * sx * sy
    return u, g / 100.0


def _v_shape(x):
    x, sx, cx, sy, cy = _trig(x)
    v = np.column_stack([sx * cy, -cx * sy])
    g = np.empty((len(x), 2, 2))
    g[:, 0, 0] = TWO_PI * cx * cy
    g[:, 0, 1] = -TWO_PI * sx * sy
    g[:, 1, 0] = TWO_PI * sx * sy
    g[:, 1, 1] = -TWO_PI * cx * cy
    return v, g


def _p_shape(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    X, Y = x[:, 0], x[:, 1]
    p = 60 * X**2 * Y - 20 * Y**3 - 5
    gp = np.column_stack([120 * X * Y, 60 * X**2 - 60 * Y**2])
    return p, gp


def exact_fields(case: ManufacturedCase, t: float, x) -> ExactFields:
    th, dth = case.theta.value_at(t), case.theta.derivative_at(t)
    u, gu = _u_shape(x)
    v, gv = _v_shape(x)
    p, gp = _p_shape(x)
    return ExactFields(th * u, th * gu, th * v, th * gv, th * p, th * gp, dth * u, dth * v)


def exact_u(case: ManufacturedCase, t: float):
    def f(x):
        e = exact_fields(case, t, x)
        return e.u, e.grad_u
    return f


def exact_v(case: ManufacturedCase, t: float):
    def f(x):
        e = exact_fields(case, t, x)
        return e.v, e.grad_v
    return f


def exact_p(case: ManufacturedCase, t: float):
    def f(x):
        e = exact_fields(case, t, x)
        return e.p, e.grad_p
    return f


def forcing_fluid(case: ManufacturedCase, t: float, x) -> np.ndarray:
    """rho dv/dt + alpha (v - du/dt) - nu lap v + grad p."""
    prm = case.params
    e = exact_fields(case, t, x)
    lap_v = -2.0 * TWO_PI**2 * e.v
    return prm.rho * e.dv_dt + prm.alpha * (e.v - e.du_dt) - prm.nu * lap_v + e.grad_p


def div_stress_fd(case: ManufacturedCase, t: float, x, h: float | None = None) -> np.ndarray:
    """Central-difference divergence of the exact stress field, shape (P, 2)."""
    h = case.fd_step if h is None else h
    x = np.atleast_2d(np.asarray(x, dtype=float))
    th = case.theta.value_at(t)
    out = np.zeros((len(x), 2))
    for d in range(2):
        step = np.zeros(2)
        step[d] = h
        Tp = stress(th * _u_shape(x + step)[1], case.params)
        Tm = stress(th * _u_shape(x - step)[1], case.params)
        out += (Tp[:, :, d] - Tm[:, :, d]) / (2 * h)
    return out


def forcing_solid(case: ManufacturedCase, t: float, x, h: float | None = None) -> np.ndarray:
    """-div T(u) - alpha (v - du/dt)."""
    e = exact_fields(case, t, x)
    return -div_stress_fd(case, t, x, h) - case.params.alpha * (e.v - e.du_dt)


def dirichlet_data(case: ManufacturedCase):
    """Boundary data on every side for ``u`` and ``v``."""
    def gu(t, x):
        return exact_fields(case, t, x).u

    def gv(t, x):
        return exact_fields(case, t, x).v

    return {tag: gu for tag in BoundaryTag}, {tag: gv for tag in BoundaryTag}


@dataclass
class ErrorReport:
    err_u_h01: float
    err_u_l2: float
    err_v_h01: float
    err_v_l2: float
    err_p_l2: float

    COLUMNS = ("err_u_h01", "err_u_l2", "err_v_h01", "err_v_l2", "err_p_l2")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}


class ErrorAccumulator:
    """Time-discrete error norms accumulated step by step.

    Usable directly as a ``time_loop`` callback.
    """

    def __init__(self, case: ManufacturedCase, dofmaps, dt: float, quad_order: int = 4):
        self.case = case
        self.umap, self.vmap, self.pmap = dofmaps
        self.dt = dt
        self.quad = gauss_rule(quad_order)
        self._sum_u = self._sum_v = self._sum_p = 0.0
        self._max_u = self._max_v = 0.0
        self.steps = 0

    def __call__(self, state, diag=None):
        t = state.t
        lu, hu = error_norms(state.u, self.umap, exact_u(self.case, t), self.quad)
        lv, hv = error_norms(state.v, self.vmap, exact_v(self.case, t), self.quad)
        lp, _ = error_norms(state.p, self.pmap, exact_p(self.case, t), self.quad)
        self._sum_u += self.dt * hu**2
        self._sum_v += self.dt * hv**2
        self._sum_p += self.dt * lp**2
        self._max_u = max(self._max_u, lu)
        self._max_v = max(self._max_v, lv)
        self.steps += 1

    def report(self) -> ErrorReport:
        return ErrorReport(
            err_u_h01=float(np.sqrt(self._sum_u)),
            err_u_l2=self._max_u,
            err_v_h01=float(np.sqrt(self._sum_v)),
            err_v_l2=self._max_v,
            err_p_l2=float(np.sqrt(self._sum_p)),
        )


def error_metrics(history, case: ManufacturedCase, dofmaps: tuple[DofMap, DofMap, DofMap],
                  dt: float | None = None) -> ErrorReport:
    """Error norms over the states with ``n >= 1`` in ``history``."""
    states = [s for s in history if s.n >= 1]
    if dt is None:
        dt = states[0].t / states[0].n if states else 1.0
    acc = ErrorAccumulator(case, dofmaps, dt)
    for s in states:
        acc(s)
    return acc.report()
