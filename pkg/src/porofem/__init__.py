"""Finite element solver for a fluid-saturated poro-viscoelastic medium
with strain-dependent stiffness, written as a coupled solid displacement,
fluid velocity and pressure system."""

from .constitutive import (
    ConstitutivePositivityError,
    GammaConstants,
    MaterialParams,
    ParameterError,
    validate_smallness,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .mesh import BoundaryTag, Mesh, MeshError, Rectangle, build_rect_mesh, unit_square_mesh
from .solver import (
    CoupledSystem,
    ProblemSetup,
    PressureGauge,
    SolverError,
    SystemState,
    ViscousForm,
    time_loop,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryTag", "ConstitutivePositivityError", "CoupledSystem", "GammaConstants",
    "KERNEL_BACKEND", "MaterialParams", "Mesh", "MeshError", "ParameterError",
    "PressureGauge", "ProblemSetup", "Rectangle", "SolverError", "SystemState",
    "ViscousForm", "build_rect_mesh", "time_loop", "unit_square_mesh", "validate_smallness",
]
