"""Uniform quadrilateral meshes of axis-aligned rectangles."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class MeshError(ValueError):
    pass


class BoundaryTag(IntEnum):
    """Sides of the rectangle, counter-clockwise from the bottom edge."""

    GAMMA1 = 1  # bottom, y = y_min
    GAMMA2 = 2  # right, x = x_max
    GAMMA3 = 3  # top, y = y_max
    GAMMA4 = 4  # left, x = x_min


@dataclass(frozen=True)
class Rectangle:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


UNIT_SQUARE = Rectangle(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured ``nx`` by ``ny`` partition of a rectangle.

    Vertices are numbered lexicographically (x fastest), cells list their
    four vertices counter-clockwise starting at the lower-left corner, and
    each boundary edge carries exactly one :class:`BoundaryTag`.
    """

    domain: Rectangle
    nx: int
    ny: int
    vertices: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    facets: np.ndarray = field(repr=False)
    facet_tags: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return (self.domain.x_max - self.domain.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.domain.y_max - self.domain.y_min) / self.ny

    @property
    def h(self) -> float:
        """Cell diameter."""
        return float(np.hypot(self.dx, self.dy))

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def cell_origins(self) -> np.ndarray:
        """Lower-left corner of every cell, shape (n_cells, 2)."""
        return self.vertices[self.cells[:, 0]]

    def facets_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return self.facets[self.facet_tags == int(tag)]


def build_rect_mesh(domain: Rectangle, nx: int, ny: int) -> Mesh:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (domain.x_max > domain.x_min and domain.y_max > domain.y_min):
        raise MeshError(f"degenerate rectangle {domain}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(domain.x_min, domain.x_max, nx + 1)
    ys = np.linspace(domain.y_min, domain.y_max, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    vid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = vid[:-1, :-1].ravel()
    v10 = vid[:-1, 1:].ravel()
    v11 = vid[1:, 1:].ravel()
    v01 = vid[1:, :-1].ravel()
    cells = np.column_stack([v00, v10, v11, v01])

    # each side's edges oriented counter-clockwise around the domain
    bottom = np.column_stack([vid[0, :-1], vid[0, 1:]])
    right = np.column_stack([vid[:-1, -1], vid[1:, -1]])
    top = np.column_stack([vid[-1, 1:], vid[-1, :-1]])[::-1]
    left = np.column_stack([vid[1:, 0], vid[:-1, 0]])[::-1]
    facets = np.vstack([bottom, right, top, left])
    tags = np.concatenate([
        np.full(nx, BoundaryTag.GAMMA1),
        np.full(ny, BoundaryTag.GAMMA2),
        np.full(nx, BoundaryTag.GAMMA3),
        np.full(ny, BoundaryTag.GAMMA4),
    ]).astype(np.int8)

    for arr in (vertices, cells, facets, tags):
        arr.setflags(write=False)
    return Mesh(domain, nx, ny, vertices, cells, facets, tags)


def unit_square_mesh(m: int) -> Mesh:
    """Refinement level ``m``: 2**m cells per side, h = sqrt(2) * 2**-m."""
    return build_rect_mesh(UNIT_SQUARE, 2**m, 2**m)
