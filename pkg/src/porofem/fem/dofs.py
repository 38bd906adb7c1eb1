"""Global numbering of Lagrange unknowns on structured meshes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import BoundaryTag, Mesh
from .elements import ElementKind, ReferenceElement, reference_element


@dataclass(frozen=True, eq=False)
class DofMap:
    """Conforming numbering of a scalar or vector Lagrange space.

    Nodes follow the global lattice of the element (lexicographic, x
    fastest); vector components are interleaved, so component ``c`` of node
    ``k`` is global unknown ``n_components * k + c``.
    """

    mesh: Mesh
    element: ReferenceElement
    n_components: int
    lattice_shape: tuple[int, int]  # (points along y, points along x)
    node_coords: np.ndarray = field(repr=False)
    cell_nodes: np.ndarray = field(repr=False)  # (n_cells, n_local_nodes)
    cell_dofs: np.ndarray = field(repr=False)  # (n_cells, n_local_nodes * n_components)

    @property
    def kind(self) -> ElementKind:
        return self.element.kind

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.n_components

    @property
    def dofs_per_cell(self) -> int:
        return self.cell_dofs.shape[1]

    def boundary_nodes(self, tag: BoundaryTag) -> np.ndarray:
        ny1, nx1 = self.lattice_shape
        ids = np.arange(ny1 * nx1).reshape(ny1, nx1)
        tag = BoundaryTag(tag)
        if tag is BoundaryTag.GAMMA1:
            return ids[0, :].copy()
        if tag is BoundaryTag.GAMMA2:
            return ids[:, -1].copy()
        if tag is BoundaryTag.GAMMA3:
            return ids[-1, :].copy()
        return ids[:, 0].copy()

    def node_dofs(self, nodes: np.ndarray, component: int | None = None) -> np.ndarray:
        nodes = np.asarray(nodes)
        nc = self.n_components
        if component is not None:
            return nc * nodes + component
        return (nc * nodes[:, None] + np.arange(nc)).ravel()


def build_dof_map(mesh: Mesh, kind: ElementKind | str, n_components: int = 1) -> DofMap:
    if n_components not in (1, 2):
        raise ValueError(f"n_components must be 1 or 2, got {n_components}")
    elem = reference_element(kind)
    k = elem.degree
    nx1, ny1 = k * mesh.nx + 1, k * mesh.ny + 1
    d = mesh.domain
    xs = np.linspace(d.x_min, d.x_max, nx1)
    ys = np.linspace(d.y_min, d.y_max, ny1)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    ci, cj = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
    ci, cj = ci.ravel(), cj.ravel()
    I = k * ci[:, None] + elem.offsets[None, :, 0]
    J = k * cj[:, None] + elem.offsets[None, :, 1]
    cell_nodes = J * nx1 + I
    if n_components == 1:
        cell_dofs = cell_nodes
    else:
        cell_dofs = (n_components * cell_nodes[:, :, None] + np.arange(n_components)).reshape(
            mesh.n_cells, -1
        )
    for arr in (coords, cell_nodes, cell_dofs):
        arr.setflags(write=False)
    return DofMap(mesh, elem, n_components, (ny1, nx1), coords, cell_nodes, cell_dofs)


def nodal_interpolate(field, dofmap: DofMap) -> np.ndarray:
    """Lagrange interpolant coefficients of ``field``.

    ``field`` maps an ``(P, 2)`` array of points to ``(P,)`` values for scalar
    spaces or ``(P, 2)`` for vector spaces; plain constants are accepted.
    """
    pts = dofmap.node_coords
    if callable(field):
        vals = np.asarray(field(pts), dtype=float)
    else:
        vals = np.asarray(field, dtype=float)
    shape = (dofmap.n_nodes,) if dofmap.n_components == 1 else (dofmap.n_nodes, dofmap.n_components)
    vals = np.broadcast_to(vals, shape)
    return np.ascontiguousarray(vals, dtype=float).reshape(-1).copy()
