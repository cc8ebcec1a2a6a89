"""Newtonian capacity from the unit-potential single-layer equation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from .assembly import Assembler, assembler_for
from .mesh import SurfaceMesh

__all__ = [
    "CapacityReport",
    "IllConditionedWarning",
    "equilibrium_density",
    "capacity",
    "polya_szego_rhs",
    "spheroid_capacity_oracle",
    "ellipsoid_capacity_quad",
]

COND_LIMIT = 1e12


class IllConditionedWarning(RuntimeWarning):
    """The single-layer system is close to singular."""


@dataclass
class CapacityReport:
    """Capacity of one mesh and the quantities derived from it.

    ``equilibrium_density`` is the panel-constant charge at unit potential,
    so ``cap = sum(areas * equilibrium_density)``.
    """

    cap: float
    equilibrium_density: np.ndarray
    area: float
    volume: float
    area_over_cap: float
    polya_szego_rhs: float
    condition: float
    residual: float

    @property
    def polya_szego_margin(self) -> float:
        return self.cap - self.polya_szego_rhs

    def as_dict(self) -> dict:
        return {
            "cap": float(self.cap),
            "area": float(self.area),
            "volume": float(self.volume),
            "area_over_cap": float(self.area_over_cap),
            "polya_szego_rhs": float(self.polya_szego_rhs),
            "polya_szego_margin": float(self.polya_szego_margin),
            "condition": float(self.condition),
            "residual": float(self.residual),
            "density_min": float(self.equilibrium_density.min()),
            "density_max": float(self.equilibrium_density.max()),
        }


def polya_szego_rhs(volume: float) -> float:
    """Capacity of the ball with the given volume, ``2 (6 pi^2)^{1/3} Vol^{1/3}``."""
    return float(2.0 * np.cbrt(6.0 * np.pi**2) * np.cbrt(volume))


def equilibrium_density(mesh: SurfaceMesh, assembler: Assembler | None = None,
                        return_info: bool = False):
    """Panel-constant density ``psi`` with ``K psi = 1`` for the Newtonian kernel.

    The Galerkin system ``S psi = areas`` is symmetric positive definite and
    is solved by Cholesky; the reciprocal condition number comes from the
    LAPACK estimator.

    Parameters
    ----------
    mesh : SurfaceMesh
    assembler : Assembler, optional
        Reuse an existing assembler for this mesh.
    return_info : bool
        Also return ``(condition, relative_residual)``.

    Warns
    -----
    IllConditionedWarning
        When the condition estimate exceeds ``1e12``.
    """
    asm = assembler if assembler is not None else assembler_for(mesh)
    S = asm.blocks(0.0).scalar
    areas = mesh.areas
    s = 1.0 / np.sqrt(areas)
    Sh = S * s[:, None] * s[None, :]
    try:
        c, low = linalg.cho_factor(Sh, lower=False, check_finite=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"single-layer matrix is not positive definite: {exc}") from exc
    rcond, info = linalg.lapack.dpocon(c, np.linalg.norm(Sh, 1), uplo="U")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > COND_LIMIT:
        warnings.warn(f"single-layer system condition estimate {cond:.3g} exceeds {COND_LIMIT:.0e}",
                      IllConditionedWarning, stacklevel=2)
    u = linalg.cho_solve((c, low), np.sqrt(areas))
    psi = u * s
    r = S @ psi / areas - 1.0
    res = float(np.sqrt(np.sum(areas * r**2) / np.sum(areas)))
    if return_info:
        return psi, (float(cond), res)
    return psi


def capacity(mesh: SurfaceMesh, assembler: Assembler | None = None) -> CapacityReport:
    """Total equilibrium charge at unit boundary potential."""
    psi, (cond, res) = equilibrium_density(mesh, assembler, return_info=True)
    cap = float(np.dot(mesh.areas, psi))
    area, vol = float(mesh.area), float(mesh.volume)
    return CapacityReport(cap, psi, area, vol, area / cap, polya_szego_rhs(vol), cond, res)


def spheroid_capacity_oracle(a_axis: float, b_axis: float) -> float:
    """Closed-form capacity of a prolate spheroid with semi-axes ``(a, b, b)``, ``a >= b``.

    ``4 pi a e / artanh(e)`` with eccentricity ``e = sqrt(1 - b^2/a^2)``,
    which equals ``4 pi sqrt(a^2 - b^2) / arccosh(a / b)`` and tends to
    ``4 pi b`` as ``a -> b``.
    """
    a, b = float(a_axis), float(b_axis)
    if not (a >= b > 0):
        raise ValueError(f"need a_axis >= b_axis > 0, got ({a}, {b})")
    e = np.sqrt((a - b) * (a + b)) / a
    if e < 1e-6:
        # artanh(e)/e = 1 + e^2/3 + e^4/5 + ...
        return float(4.0 * np.pi * a / (1.0 + e * e / 3.0 + e**4 / 5.0))
    return float(4.0 * np.pi * a * e / np.arctanh(e))


def ellipsoid_capacity_quad(semi_axes) -> float:
    """Capacity of a solid ellipsoid by quadrature of its elliptic integral.

    ``4 pi / Cap = (1/2) int_0^inf dt / sqrt((a^2+t)(b^2+t)(c^2+t))``.
    """
    a, b, c = (float(x) for x in semi_axes)
    if min(a, b, c) <= 0:
        raise ValueError("semi-axes must be positive")
    s = max(a, b, c) ** 2

    # t = s u / (1 - u) maps [0, 1) onto [0, inf)
    def f(u):
        t = s * u / (1.0 - u)
        jac = s / (1.0 - u) ** 2
        return jac / np.sqrt((a * a + t) * (b * b + t) * (c * c + t))

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-11, limit=200)
    return float(4.0 * np.pi / (0.5 * val))
