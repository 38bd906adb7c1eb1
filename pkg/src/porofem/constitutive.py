"""Pointwise constitutive algebra of the truncated strain-limiting law.

The strain is a nonlinear function of stress,

    eps = E1 (1 + l1 tr eps) T + E2 (1 + l2 tr eps) tr(T) I,

which is inverted to an explicit stress in which the divergence of the
displacement is clamped to ``[-delta, delta]``. Once frozen at the previous
time level the law contributes two positive weights, ``B1`` on the strain
term and ``B2`` on the divergence term.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class ParameterError(ValueError):
    pass


class ConstitutivePositivityError(ArithmeticError):
    """A frozen coefficient lost positivity (lambda too large for delta)."""

    def __init__(self, message, cell=None, value=None):
        super().__init__(message)
        self.cell = cell
        self.value = value


@dataclass(frozen=True)
class MaterialParams:
    alpha: float = 1.0
    nu: float = 1.0
    rho: float = 1.0
    rho_s: float = 0.0
    E1: float = 1.0
    E2: float = -0.2
    lambda1: float = 2.0
    lambda2: float = 2.0
    delta: float = 0.4
    d: int = 2

    def __post_init__(self):
        for name in ("alpha", "nu", "rho", "delta"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.rho_s < 0:
            raise ParameterError(f"rho_s must be non-negative, got {self.rho_s}")
        if not self.E1 > 0:
            raise ParameterError(f"E1 must be positive, got {self.E1}")
        if self.E2 > 0:
            raise ParameterError(f"E2 must be non-positive, got {self.E2}")
        if not self.E1 - self.d * abs(self.E2) > 0:
            raise ParameterError(
                f"E1 - d|E2| must be positive, got {self.E1 - self.d * abs(self.E2)}"
            )

    @property
    def degenerate(self) -> bool:
        """True when E2 == 0, which the sign conditions exclude (E2 < 0)."""
        return self.E2 == 0

    def with_lambdas(self, lam1: float, lam2: float | None = None) -> "MaterialParams":
        return replace(self, lambda1=lam1, lambda2=lam1 if lam2 is None else lam2)


@dataclass(frozen=True)
class GammaConstants:
    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    gamma5: float
    gamma6: float
    gamma7: float
    gamma8: float
    admissible: bool

    def as_dict(self) -> dict:
        return {f"gamma{i}": getattr(self, f"gamma{i}") for i in range(1, 9)} | {
            "admissible": self.admissible
        }


def truncate(f, r):
    """Clamp ``f`` to ``[-r, r]`` (works on scalars and arrays)."""
    if not np.all(np.asarray(r) > 0):
        raise ParameterError(f"truncation threshold must be positive, got {r}")
    out = np.clip(f, -r, r)
    return float(out) if np.ndim(out) == 0 else out


def coeff_F(s, params: MaterialParams):
    """E1 (1 + l1 s) - d |E2| (1 + l2 s)."""
    E1, aE2, d = params.E1, abs(params.E2), params.d
    return E1 * (1 + params.lambda1 * s) - d * aE2 * (1 + params.lambda2 * s)


def frozen_coefficients(div_u, params: MaterialParams):
    """Return ``(1 + l1 t, F(t), B1, B2)`` with ``t`` the truncated divergence.

    No positivity check is made; callers decide how to report failures.
    """
    t = np.clip(div_u, -params.delta, params.delta)
    a = 1.0 + params.lambda1 * t
    F = coeff_F(t, params)
    b = 1.0 + params.lambda2 * t
    with np.errstate(divide="ignore", invalid="ignore"):
        B1 = 1.0 / a
        B2 = b / (a * F)
    return a, F, B1, B2


def coeffs_B1B2(s, params: MaterialParams):
    """Frozen weights ``(B1, B2)`` for divergence value(s) ``s``.

    Raises :class:`ConstitutivePositivityError` when ``1 + l1 t`` or
    ``F(t)`` is not positive somewhere.
    """
    a, F, B1, B2 = frozen_coefficients(np.asarray(s, dtype=float), params)
    bad = (a <= 0) | (F <= 0)
    if np.any(bad):
        idx = int(np.flatnonzero(np.ravel(bad))[0])
        raise ConstitutivePositivityError(
            f"non-positive constitutive coefficient: 1+l1*t={np.ravel(a)[idx]:.6g}, "
            f"F(t)={np.ravel(F)[idx]:.6g} at entry {idx}",
            value=float(min(np.ravel(a)[idx], np.ravel(F)[idx])),
        )
    if np.ndim(B1) == 0:
        return float(B1), float(B2)
    return B1, B2


def validate_smallness(params: MaterialParams) -> GammaConstants:
    l1, l2, dl = abs(params.lambda1), abs(params.lambda2), params.delta
    g3 = params.E1 + params.d * params.E2
    g4 = params.E1 * params.lambda1 + params.d * params.E2 * params.lambda2
    c1 = 1 - l1 * dl
    c56 = g3 - abs(g4) * dl
    c78 = 1 - l2 * dl
    admissible = bool(c1 > 0 and c56 > 0 and c78 > 0)

    def inv(x):
        return 1.0 / x if x != 0 else float("inf")

    return GammaConstants(
        gamma1=1.0 / (1 + l1 * dl),
        gamma2=inv(c1),
        gamma3=g3,
        gamma4=g4,
        gamma5=1.0 / (g3 + abs(g4) * dl),
        gamma6=inv(c56),
        gamma7=c78,
        gamma8=1 + l2 * dl,
        admissible=admissible,
    )


def lame_to_E(mu: float, lam: float, d: int = 2) -> tuple[float, float]:
    """Compliance moduli of the linear law with Lame parameters ``mu``, ``lam``."""
    if not mu > 0:
        raise ParameterError(f"shear modulus must be positive, got {mu}")
    if lam < 0:
        raise ParameterError(f"Lame lambda must be non-negative, got {lam}")
    E1 = 1.0 / (2 * mu)
    E2 = -lam / (2 * mu * (d * lam + 2 * mu))
    return E1, E2 + 0.0


def E_to_lame(E1: float, E2: float, d: int = 2) -> tuple[float, float]:
    """Inverse of :func:`lame_to_E`."""
    mu = 1.0 / (2 * E1)
    # E2 = -lam E1^2 / (d lam E1 + 1)  =>  lam = -E2 / (E1^2 + d E1 E2)
    lam = -E2 / (E1 * E1 + d * E1 * E2)
    return mu, lam


def stress(grad_u, params: MaterialParams, truncated: bool = True):
    """Explicit stress tensor of the inverted law for displacement gradients (..., 2, 2)."""
    grad_u = np.asarray(grad_u, dtype=float)
    eps = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    div = np.trace(grad_u, axis1=-2, axis2=-1)
    t = np.clip(div, -params.delta, params.delta) if truncated else div
    a = params.E1 * (1 + params.lambda1 * t)
    iso = abs(params.E2) * (1 + params.lambda2 * t) * div / coeff_F(t, params)
    eye = np.eye(grad_u.shape[-1])
    return (eps + iso[..., None, None] * eye) / a[..., None, None]
