"""Finite element building blocks: reference elements, DOF maps, norms, assembly."""

from .assembly import BlockPattern, assemble_load, global_matrix, vector_operators
from .dofs import DofMap, build_dof_map, nodal_interpolate
from .elements import (
    ElementKind,
    QuadratureRule,
    ReferenceDomainError,
    ReferenceElement,
    gauss_rule,
    reference_element,
    shape_eval,
    tabulate,
)
from .norms import error_norms

__all__ = [
    "BlockPattern",
    "assemble_load",
    "global_matrix",
    "vector_operators",
    "DofMap",
    "ElementKind",
    "QuadratureRule",
    "ReferenceDomainError",
    "ReferenceElement",
    "build_dof_map",
    "error_norms",
    "gauss_rule",
    "nodal_interpolate",
    "reference_element",
    "shape_eval",
    "tabulate",
]
