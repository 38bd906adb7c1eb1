"""Error norms against closed-form fields."""

from __future__ import annotations

import numpy as np

from .dofs import DofMap
from .elements import QuadratureRule, gauss_rule
from .fields import evaluate, jacobian_det, physical_points


def error_norms(coeffs, dofmap: DofMap, exact, quad: QuadratureRule | None = None):
    """L2 norm and H1 seminorm of ``exact - u_h``.

    ``exact`` maps an ``(P, 2)`` point array to ``(values, gradients)`` with
    shapes ``(P,)``/``(P, 2)`` for scalars or ``(P, 2)``/``(P, 2, 2)`` for
    vectors (gradient row ``k`` is the gradient of component ``k``).
    """
    quad = quad or gauss_rule(4)
    mesh = dofmap.mesh
    nc = dofmap.n_components
    vh, gh = evaluate(coeffs, dofmap, quad.points)
    pts = physical_points(mesh, quad.points).reshape(-1, 2)
    ev, eg = exact(pts)
    ev = np.asarray(ev, dtype=float).reshape(mesh.n_cells, quad.n_points, nc)
    eg = np.asarray(eg, dtype=float).reshape(mesh.n_cells, quad.n_points, nc, 2)
    w = quad.weights * jacobian_det(mesh)
    l2 = np.einsum("cpk,p->", (ev - vh) ** 2, w)
    h1 = np.einsum("cpkd,p->", (eg - gh) ** 2, w)
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def l2_norm_squared(coeffs, dofmap: DofMap, quad: QuadratureRule | None = None) -> float:
    quad = quad or gauss_rule(3)
    vh, _ = evaluate(coeffs, dofmap, quad.points)
    return float(np.einsum("cpk,p->", vh**2, quad.weights) * jacobian_det(dofmap.mesh))
