"""Evaluation of finite element fields at reference points of every cell."""

from __future__ import annotations

import numpy as np

from ..mesh import Mesh
from .dofs import DofMap
from .elements import ReferenceElement, tabulate


def inverse_jacobian(mesh: Mesh) -> np.ndarray:
    """Diagonal of the (constant) inverse cell Jacobian, as a length-2 array."""
    return np.array([2.0 / mesh.dx, 2.0 / mesh.dy])


def jacobian_det(mesh: Mesh) -> float:
    return 0.25 * mesh.dx * mesh.dy


def physical_points(mesh: Mesh, ref_points) -> np.ndarray:
    """Map reference points to every cell, shape (n_cells, P, 2)."""
    ref = np.atleast_2d(np.asarray(ref_points, dtype=float))
    scale = np.array([mesh.dx, mesh.dy])
    return mesh.cell_origins()[:, None, :] + 0.5 * (ref[None, :, :] + 1.0) * scale


def physical_tabulate(elem: ReferenceElement, mesh: Mesh, ref_points):
    """Shape values (P, n) and physical gradients (P, n, 2)."""
    vals, grads = tabulate(elem, ref_points)
    return vals, grads * inverse_jacobian(mesh)


def evaluate(coeffs: np.ndarray, dofmap: DofMap, ref_points, with_values: bool = True):
    """Values (n_cells, P, nc) and gradients (n_cells, P, nc, 2) of a FE field.

    For scalar spaces ``nc`` is 1. Gradient index ``[..., k, d]`` is the
    derivative of component ``k`` along axis ``d``.
    """
    vals, grads = physical_tabulate(dofmap.element, dofmap.mesh, ref_points)
    nc = dofmap.n_components
    local = np.asarray(coeffs)[dofmap.cell_dofs].reshape(dofmap.mesh.n_cells, -1, nc)
    g = np.einsum("pnd,cnk->cpkd", grads, local, optimize=True)
    if not with_values:
        return None, g
    v = np.einsum("pn,cnk->cpk", vals, local, optimize=True)
    return v, g


def strain_from_grad(grad: np.ndarray) -> np.ndarray:
    """Symmetric part of a (..., 2, 2) displacement gradient."""
    return 0.5 * (grad + np.swapaxes(grad, -1, -2))
