"""Dirac matrices and the point kernels of the resolvent of the free Dirac operator.

Every kernel here is a function of the separation vector ``x`` between the
observation and the source point.  Vectorized: ``x`` may have shape ``(..., 3)``
and the returned matrices then have shape ``(..., 4, 4)`` or ``(..., 2, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PAULI",
    "ALPHA",
    "BETA",
    "I2",
    "I4",
    "PhysicalParams",
    "SingularPointError",
    "ParameterError",
    "decay_rate",
    "phi_a",
    "k_a",
    "w_a",
    "dphi_da",
    "kernel_split",
    "alpha_dot",
    "sigma_dot",
]

I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)
PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
_Z2 = np.zeros((2, 2), dtype=complex)
ALPHA = np.array([np.block([[_Z2, s], [s, _Z2]]) for s in PAULI])
BETA = np.block([[I2, _Z2], [_Z2, -I2]])

for _arr in (I2, I4, PAULI, ALPHA, BETA):
    _arr.setflags(write=False)

FOUR_PI = 4.0 * np.pi


class SingularPointError(ValueError):
    """Kernel evaluated at zero separation."""


class ParameterError(ValueError):
    """Mass or spectral parameter outside the admissible range."""


@dataclass(frozen=True)
class PhysicalParams:
    """Mass ``m > 0`` and spectral parameter ``a`` with ``|a| <= m``."""

    m: float
    a: float

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise ParameterError(f"mass must be positive, got {self.m!r}")
        if not np.isfinite(self.a) or abs(self.a) > self.m * (1 + 1e-14):
            raise ParameterError(f"need |a| <= m, got a={self.a!r}, m={self.m!r}")

    @property
    def kappa(self) -> float:
        return decay_rate(self.m, self.a)

    @property
    def interior(self) -> bool:
        return abs(self.a) < self.m


def decay_rate(m: float, a: float) -> float:
    """``sqrt(m**2 - a**2)``, clipped at zero for ``|a| = m`` up to rounding."""
    return float(np.sqrt(max(m * m - a * a, 0.0)))


def alpha_dot(v) -> np.ndarray:
    """``alpha . v`` for vectors of shape ``(..., 3)``."""
    return np.tensordot(np.asarray(v), ALPHA, axes=([-1], [0]))


def sigma_dot(v) -> np.ndarray:
    """``sigma . v`` for vectors of shape ``(..., 3)``."""
    return np.tensordot(np.asarray(v), PAULI, axes=([-1], [0]))


def _radius(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError("separation vectors must have a trailing axis of length 3")
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise SingularPointError("kernel evaluated at zero separation")
    return x, r


def _mat(c):
    # scalar coefficients broadcast against trailing matrix axes
    return np.asarray(c)[..., None, None]


def _params(p: PhysicalParams):
    return p.m, p.a, p.kappa


def k_a(x, p: PhysicalParams) -> np.ndarray:
    """Scalar Yukawa kernel ``exp(-kappa r) / (4 pi r)`` (times the 2x2 identity)."""
    _, r = _radius(x)
    return np.exp(-p.kappa * r) / (FOUR_PI * r)


def w_a(x, p: PhysicalParams) -> np.ndarray:
    """Off-diagonal Pauli block ``i exp(-kappa r) (1 + kappa r) sigma.x / (4 pi r**3)``."""
    x, r = _radius(x)
    kr = p.kappa * r
    g = np.exp(-kr) * (1.0 + kr) / (FOUR_PI * r**3)
    return 1j * _mat(g) * sigma_dot(x)


def phi_a(x, p: PhysicalParams) -> np.ndarray:
    """4x4 fundamental solution of ``H - a`` at separation ``x``."""
    m, a, kappa = _params(p)
    x, r = _radius(x)
    kr = kappa * r
    e = np.exp(-kr) / (FOUR_PI * r)
    scal = _mat(e) * (a * I4 + m * BETA)
    vec = _mat(1j * e * (1.0 + kr) / r**2) * alpha_dot(x)
    return scal + vec


def dphi_da(x, p: PhysicalParams) -> np.ndarray:
    """Derivative of :func:`phi_a` with respect to the spectral parameter.

    Only defined for ``|a| < m``; the first term carries a ``1/kappa`` factor.
    """
    if not p.interior:
        raise ParameterError("derivative kernel needs |a| < m")
    m, a, kappa = _params(p)
    x, r = _radius(x)
    e = np.exp(-kappa * r) / FOUR_PI
    t1 = _mat((a / kappa) * e) * (a * I4 + m * BETA)
    t2 = _mat(1j * a * e / r) * alpha_dot(x)
    t3 = _mat(e / r) * I4
    return t1 + t2 + t3


def kernel_split(x, p: PhysicalParams):
    """Split :func:`phi_a` into a weakly singular, a bounded and an odd part.

    Returns
    -------
    w1 : ndarray
        ``exp(-kappa r)/(4 pi r) (a + m beta + i kappa alpha.x / r)``, O(1/r).
    w2 : ndarray
        ``(exp(-kappa r) - 1) i alpha.x / (4 pi r**3)``, bounded.
    w3 : ndarray
        ``i alpha.x / (4 pi r**3)``, independent of ``a``.
    """
    m, a, kappa = _params(p)
    x, r = _radius(x)
    kr = kappa * r
    e = np.exp(-kr) / (FOUR_PI * r)
    ax = alpha_dot(x)
    w1 = _mat(e) * (a * I4 + m * BETA) + _mat(1j * e * kappa / r) * ax
    w2 = _mat(1j * np.expm1(-kr) / (FOUR_PI * r**3)) * ax
    w3 = _mat(1j / (FOUR_PI * r**3)) * ax
    return w1, w2, w3
