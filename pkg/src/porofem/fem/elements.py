"""Lagrange Q1/Q2 reference elements on [-1, 1]^2 and Gauss-Legendre rules."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ElementKind(str, Enum):
    Q1 = "Q1"
    Q2 = "Q2"


class ReferenceDomainError(ValueError):
    pass


# (ia, ja) lattice offsets of each local node; corners CCW, then edge midpoints, then centre
_Q1_OFFSETS = np.array([(0, 0), (1, 0), (1, 1), (0, 1)])
_Q2_OFFSETS = np.array([(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1)])


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    kind: ElementKind
    degree: int
    offsets: np.ndarray  # (n_nodes, 2) lattice offsets within a cell
    node_coords: np.ndarray  # (n_nodes, 2) reference coordinates

    @property
    def n_nodes(self) -> int:
        return len(self.offsets)


def reference_element(kind: ElementKind | str) -> ReferenceElement:
    kind = ElementKind(kind)
    degree = 1 if kind is ElementKind.Q1 else 2
    offsets = _Q1_OFFSETS if degree == 1 else _Q2_OFFSETS
    coords = -1.0 + 2.0 * offsets / degree
    return ReferenceElement(kind, degree, offsets.copy(), coords)


def _lagrange_1d(degree: int, t: np.ndarray):
    """Values and derivatives of the 1D nodal basis at equispaced nodes on [-1, 1]."""
    t = np.asarray(t, dtype=float)
    if degree == 1:
        vals = np.stack([0.5 * (1 - t), 0.5 * (1 + t)])
        ders = np.stack([np.full_like(t, -0.5), np.full_like(t, 0.5)])
    else:
        vals = np.stack([0.5 * t * (t - 1), 1 - t * t, 0.5 * t * (t + 1)])
        ders = np.stack([t - 0.5, -2 * t, t + 0.5])
    return vals, ders


def tabulate(elem: ReferenceElement, points) -> tuple[np.ndarray, np.ndarray]:
    """Shape values ``(P, n)`` and reference gradients ``(P, n, 2)`` at ``points`` ``(P, 2)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vx, dx = _lagrange_1d(elem.degree, pts[:, 0])
    vy, dy = _lagrange_1d(elem.degree, pts[:, 1])
    ia, ja = elem.offsets[:, 0], elem.offsets[:, 1]
    values = (vx[ia] * vy[ja]).T
    grads = np.stack([(dx[ia] * vy[ja]).T, (vx[ia] * dy[ja]).T], axis=-1)
    return values, grads


def shape_eval(elem: ReferenceElement, point) -> tuple[np.ndarray, np.ndarray]:
    point = np.asarray(point, dtype=float)
    if point.shape != (2,):
        raise ReferenceDomainError(f"expected a single 2D point, got shape {point.shape}")
    if np.any(np.abs(point) > 1.0 + 1e-12):
        raise ReferenceDomainError(f"point {point.tolist()} lies outside [-1, 1]^2")
    values, grads = tabulate(elem, point[None, :])
    return values[0], grads[0]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int  # per-axis polynomial exactness

    @property
    def n_points(self) -> int:
        return len(self.weights)


def gauss_rule(n_per_axis: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1, 1]^2, exact to per-axis degree 2n - 1."""
    if int(n_per_axis) != n_per_axis or not 1 <= n_per_axis <= 6:
        raise ValueError(f"unsupported Gauss order {n_per_axis!r}; choose 1..6")
    n = int(n_per_axis)
    x, w = np.polynomial.legendre.leggauss(n)
    # x varies fastest, matching the lattice numbering
    X, Y = np.meshgrid(x, x)
    WX, WY = np.meshgrid(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, (WX * WY).ravel(), 2 * n - 1)
