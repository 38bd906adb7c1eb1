"""Per-quadrature-point reference operators and block CSR patterns.

All cells of a structured mesh are congruent, so an element matrix is a
weighted sum of the same per-point reference matrices; only the weights
(quadrature weight times coefficient) vary from cell to cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import kernels
from .dofs import DofMap
from .elements import QuadratureRule
from .fields import jacobian_det, physical_tabulate


def vector_basis(vals: np.ndarray, grads: np.ndarray):
    """Interleaved vector basis from scalar tables.

    Returns values (P, 2n, 2) and gradients (P, 2n, 2, 2); local function
    ``2a + c`` is scalar function ``a`` in component ``c``.
    """
    P, n = vals.shape
    phi = np.zeros((P, n, 2, 2))
    gphi = np.zeros((P, n, 2, 2, 2))
    for c in range(2):
        phi[:, :, c, c] = vals
        gphi[:, :, c, c, :] = grads
    return phi.reshape(P, 2 * n, 2), gphi.reshape(P, 2 * n, 2, 2)


@dataclass(frozen=True, eq=False)
class VectorOperators:
    """Reference matrices at each quadrature point for a vector Q_k space.

    Every array has shape (P, nloc, nloc) and already includes the
    quadrature weight and the Jacobian determinant.
    """

    phi: np.ndarray
    gphi: np.ndarray
    div: np.ndarray  # (P, nloc): divergence of each basis function
    mass: np.ndarray
    grad_grad: np.ndarray
    eps_eps: np.ndarray
    div_div: np.ndarray
    weights: np.ndarray  # (P,) quadrature weight times det J


def vector_operators(dofmap: DofMap, quad: QuadratureRule) -> VectorOperators:
    vals, grads = physical_tabulate(dofmap.element, dofmap.mesh, quad.points)
    phi, gphi = vector_basis(vals, grads)
    w = quad.weights * jacobian_det(dofmap.mesh)
    eps = 0.5 * (gphi + np.swapaxes(gphi, -1, -2))
    div = np.trace(gphi, axis1=-2, axis2=-1)
    wq = w[:, None, None]
    return VectorOperators(
        phi=phi,
        gphi=gphi,
        div=div,
        mass=wq * np.einsum("pik,pjk->pij", phi, phi),
        grad_grad=wq * np.einsum("pikd,pjkd->pij", gphi, gphi),
        eps_eps=wq * np.einsum("pikd,pjkd->pij", eps, eps),
        div_div=wq * np.einsum("pi,pj->pij", div, div),
        weights=w,
    )


def pressure_divergence(qmap: DofMap, vops: VectorOperators, quad: QuadratureRule) -> np.ndarray:
    """Per-point matrices of int q_i div(w_j), shape (P, n_q, n_v)."""
    psi, _ = physical_tabulate(qmap.element, qmap.mesh, quad.points)
    return vops.weights[:, None, None] * np.einsum("pi,pj->pij", psi, vops.div)


def scalar_integrals(qmap: DofMap, quad: QuadratureRule) -> np.ndarray:
    """Per-point contributions to int q_i, shape (P, n_q)."""
    psi, _ = physical_tabulate(qmap.element, qmap.mesh, quad.points)
    return (quad.weights * jacobian_det(qmap.mesh))[:, None] * psi


class BlockPattern:
    """Fixed CSR sparsity for a monolithic system built from cell blocks.

    Each block is registered with the global row and column indices of its
    cell-local entries; the pattern is the union of all blocks, and
    ``positions[name]`` maps every cell-local entry of a block to its slot
    in the CSR ``data`` array so values can be scattered without rebuilding
    the structure.
    """

    def __init__(self, n: int, blocks: dict[str, tuple[np.ndarray, np.ndarray]]):
        self.n = n
        keys = []
        shapes = {}
        for name, (rows, cols) in blocks.items():
            rows = np.asarray(rows, dtype=np.int64)
            cols = np.asarray(cols, dtype=np.int64)
            k = rows[:, :, None] * n + cols[:, None, :]
            shapes[name] = k.shape
            keys.append(k.ravel())
        all_keys = np.concatenate(keys)
        uniq, inverse = np.unique(all_keys, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        row_of = uniq // n
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(row_of, minlength=n), out=self.indptr[1:])
        self.nnz = len(uniq)
        self.positions = {}
        start = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            self.positions[name] = inverse[start:start + size].reshape(shape).astype(np.int64)
            start += size

    def zeros(self) -> np.ndarray:
        return np.zeros(self.nnz)

    def add_constant(self, data: np.ndarray, name: str, local: np.ndarray, scale: float = 1.0):
        """Scatter the same cell matrix ``scale * local`` into every cell of a block."""
        pos = self.positions[name]
        vals = np.broadcast_to(scale * local, pos.shape)
        kernels.scatter_add(data, pos, vals)

    def add_weighted(self, data: np.ndarray, name: str, coef: np.ndarray, ref: np.ndarray):
        """Scatter ``sum_q coef[c, q] * ref[q]`` for every cell ``c`` of a block."""
        kernels.weighted_local_scatter(data, self.positions[name], coef, ref)

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def assemble_load(dofmap: DofMap, vops: VectorOperators, f_at_qp: np.ndarray, out=None) -> np.ndarray:
    """Load vector int f . w for a vector field given at quadrature points.

    ``f_at_qp`` has shape (n_cells, P, 2).
    """
    local = np.einsum("cpk,pik,p->ci", f_at_qp, vops.phi, vops.weights, optimize=True)
    if out is None:
        out = np.zeros(dofmap.n_dofs)
    kernels.scatter_add(out, dofmap.cell_dofs, local)
    return out


def global_matrix(dofmap_r: DofMap, dofmap_c: DofMap, local: np.ndarray) -> sp.csr_matrix:
    """Standalone assembly of a constant cell matrix (n_r, n_c) over all cells."""
    rows = np.repeat(dofmap_r.cell_dofs[:, :, None], local.shape[1], axis=2)
    cols = np.repeat(dofmap_c.cell_dofs[:, None, :], local.shape[0], axis=1)
    vals = np.broadcast_to(local, rows.shape)
    return sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(dofmap_r.n_dofs, dofmap_c.n_dofs)
    ).tocsr()
