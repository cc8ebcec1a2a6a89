"""Quadrature on flat triangles: regular, graded and singular rules.

Regular rules are fully symmetric with positive weights and interior nodes.
Their orbit parameters were obtained by solving the moment equations in
extended precision for Dunavant-style orbit layouts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernels import PAULI, PhysicalParams

__all__ = [
    "TriangleRule",
    "PanelPairClass",
    "regular_rule",
    "gauss_legendre",
    "graded_gauss",
    "map_rule",
    "subdivided_rule",
    "edge_graded_rule",
    "vertex_graded_rule",
    "point_duffy_rule",
    "self_radial_integral",
    "weak_singular_self",
    "pv_self_contribution",
    "classify_pair",
]

# orbit tables: ("s3", w) centroid, ("s21", w, a) -> (a, a, 1-2a),
# ("s111", w, a, b) -> all permutations of (a, b, 1-a-b)
_ORBITS = {
    1: [("s3", 1.0)],
    2: [("s21", 0.33333333333333333333, 0.16666666666666666667)],
    3: [
        ("s21", 0.28610486473365639413, 0.45260662040601412364),
        ("s21", 0.047228468599676939201, 0.0018635048479224096751),
    ],
    4: [
        ("s21", 0.10995174365532186764, 0.09157621350977074346),
        ("s21", 0.2233815896780114657, 0.44594849091596488632),
    ],
    5: [
        ("s3", 0.225),
        ("s21", 0.13239415278850618074, 0.47014206410511508977),
        ("s21", 0.1259391805448271526, 0.1012865073234563388),
    ],
    6: [
        ("s21", 0.11678627572637936603, 0.24928674517091042129),
        ("s21", 0.050844906370206816921, 0.06308901449150222834),
        ("s111", 0.082851075618373575194, 0.31035245103378440542, 0.053145049844816947353),
    ],
    7: [
        ("s21", 0.011597656028271793003, 0.023989450469168676368),
        ("s21", 0.080113942268928692005, 0.4743146501611661173),
        ("s21", 0.12917619276688039155, 0.24077294450878003841),
        ("s111", 0.056222771134626228386, 0.76586448503044065353, 0.045638267447599493004),
    ],
    8: [
        ("s3", 0.14431560767778716825),
        ("s21", 0.095091634267284624794, 0.45929258829272315603),
        ("s21", 0.032458497623198080311, 0.050547228317030975458),
        ("s21", 0.10321737053471825028, 0.17056930775176020662),
        ("s111", 0.027230314174434994265, 0.0083947774099576053372, 0.72849239295540428124),
    ],
    9: [
        ("s3", 0.097135796282798833819),
        ("s21", 0.031334700227139070537, 0.48968251919873762778),
        ("s21", 0.077827541004774279317, 0.43708959149293663727),
        ("s21", 0.079647738927210253033, 0.18820353561903273024),
        ("s21", 0.025577675658698031262, 0.044729513394452709865),
        ("s111", 0.043283539377289377289, 0.036838412054736283635, 0.22196298916076569568),
    ],
}


@dataclass(frozen=True)
class TriangleRule:
    """Barycentric nodes and weights on the reference triangle (weights sum to 1)."""

    bary: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


class PanelPairClass(enum.IntEnum):
    IDENTICAL = 0
    EDGE = 1
    VERTEX = 2
    NEAR = 3
    FAR = 4


def _expand(orbits):
    pts, ws = [], []
    for orb in orbits:
        kind, w = orb[0], orb[1]
        if kind == "s3":
            pts.append((1 / 3, 1 / 3, 1 / 3))
            ws.append(w)
        elif kind == "s21":
            a = orb[2]
            b = 1.0 - 2.0 * a
            pts += [(a, a, b), (a, b, a), (b, a, a)]
            ws += [w] * 3
        else:
            a, b = orb[2], orb[3]
            c = 1.0 - a - b
            pts += [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
            ws += [w] * 6
    return np.array(pts), np.array(ws)


def _symmetrized_conical(n: int):
    """Collapsed Gauss-Jacobi product rule averaged over the six vertex permutations.

    Exact to degree ``2n - 1`` with positive weights and ``6 n**2`` nodes.
    """
    from scipy.special import roots_jacobi

    xs, ws = roots_jacobi(n, 1.0, 0.0)
    s, sw = 0.5 * (xs + 1.0), ws / 4.0
    t, tw = gauss_legendre(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    base = np.stack([S.ravel(), ((1 - S) * T).ravel(), ((1 - S) * (1 - T)).ravel()], axis=1)
    wb = 2.0 * (sw[:, None] * tw[None, :]).ravel()
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    bary = np.concatenate([base[:, p] for p in perms])
    w = np.tile(wb, 6) / 6.0
    return bary, w


@lru_cache(maxsize=None)
def regular_rule(degree: int) -> TriangleRule:
    """Symmetric rule exact for polynomials of total degree ``degree``.

    Raises
    ------
    ValueError
        For degrees outside 1..10.
    """
    if degree not in _ORBITS and degree != 10:
        raise ValueError(f"unsupported rule degree {degree!r}; choose 1..10")
    if degree == 10:
        bary, w = _symmetrized_conical(6)
    else:
        bary, w = _expand(_ORBITS[degree])
    bary.setflags(write=False)
    w.setflags(write=False)
    return TriangleRule(bary, w, degree)


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def graded_gauss(n: int, levels: int, ratio: float = 0.2, side: str = "left"):
    """Composite Gauss rule on [0, 1] with geometric refinement toward an end.

    ``side`` is ``"left"``, ``"right"`` or ``"both"``.
    """
    if side == "both":
        xl, wl = graded_gauss(n, levels, ratio, "left")
        return np.concatenate([0.5 * xl, 1.0 - 0.5 * xl[::-1]]), np.concatenate([0.5 * wl, 0.5 * wl[::-1]])
    brk = np.concatenate([[0.0], ratio ** np.arange(levels, -1, -1)])
    g, gw = gauss_legendre(n)
    lo, hi = brk[:-1], brk[1:]
    x = (lo[:, None] + (hi - lo)[:, None] * g).ravel()
    w = ((hi - lo)[:, None] * gw).ravel()
    if side == "right":
        return 1.0 - x[::-1], w[::-1]
    return x, w


def map_rule(corners, rule: TriangleRule):
    """Physical nodes and area-scaled weights of ``rule`` on each triangle.

    Parameters
    ----------
    corners : (..., 3, 3) array

    Returns
    -------
    nodes : (..., q, 3) array
    weights : (..., q) array
    """
    corners = np.asarray(corners, dtype=float)
    nodes = np.matmul(rule.bary, corners)
    area = 0.5 * np.linalg.norm(
        np.cross(corners[..., 1, :] - corners[..., 0, :], corners[..., 2, :] - corners[..., 0, :]), axis=-1
    )
    return nodes, area[..., None] * rule.weights


@lru_cache(maxsize=None)
def _subdivision_bary(levels: int):
    """Barycentric corners of the ``4**levels`` congruent children."""
    tris = [np.eye(3)]
    for _ in range(levels):
        new = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            new += [np.array(x) for x in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
        tris = new
    return np.array(tris)


def subdivided_rule(degree: int, levels: int) -> TriangleRule:
    """Composite rule: ``regular_rule(degree)`` on each of ``4**levels`` children."""
    base = regular_rule(degree)
    kids = _subdivision_bary(levels)
    bary = np.einsum("qk,ckj->cqj", base.bary, kids).reshape(-1, 3)
    w = np.tile(base.weights, len(kids)) / len(kids)
    return TriangleRule(bary, w, degree)


def _duffy_bary(t, w, apex, left, right):
    """Barycentric nodes of ``apex + t (left - apex) + t w (right - left)``."""
    T, Wp = np.meshgrid(t, w, indexing="ij")
    T, Wp = T.ravel(), Wp.ravel()
    bary = np.zeros((len(T), 3))
    bary[:, apex] = 1.0 - T
    bary[:, left] = T * (1.0 - Wp)
    bary[:, right] = T * Wp
    return bary, T


@lru_cache(maxsize=None)
def _edge_graded(opposite: int, n: int, levels: int):
    left, right = [k for k in range(3) if k != opposite]
    t, tw = graded_gauss(n, levels, side="right")
    w, ww = graded_gauss(n, 2, side="both")
    bary, T = _duffy_bary(t, w, opposite, left, right)
    weights = 2.0 * (tw[:, None] * ww[None, :]).ravel() * T
    return TriangleRule(bary, weights, 0)


@lru_cache(maxsize=None)
def _vertex_graded(apex: int, n: int, levels: int):
    left, right = [k for k in range(3) if k != apex]
    t, tw = graded_gauss(n, levels, side="left")
    w, ww = gauss_legendre(n + 1)
    bary, T = _duffy_bary(t, w, apex, left, right)
    weights = 2.0 * (tw[:, None] * ww[None, :]).ravel() * T
    return TriangleRule(bary, weights, 0)


def edge_graded_rule(opposite: int, n: int = 5, levels: int = 4) -> TriangleRule:
    """Rule refined toward the edge opposite local vertex ``opposite``."""
    return _edge_graded(int(opposite), n, levels)


def vertex_graded_rule(apex: int, n: int = 5, levels: int = 4) -> TriangleRule:
    """Rule refined toward local vertex ``apex``."""
    return _vertex_graded(int(apex), n, levels)


def point_duffy_rule(corners, point, n: int = 12):
    """Physical rule on a triangle refined toward an interior ``point``.

    The triangle is split into three sub-triangles with apex at ``point``;
    the Duffy Jacobian cancels a ``1/r`` singularity there.
    """
    corners = np.asarray(corners, dtype=float)
    point = np.asarray(point, dtype=float)
    t, tw = gauss_legendre(n)
    w, ww = gauss_legendre(n)
    nodes, weights = [], []
    for k in range(3):
        b, c = corners[k], corners[(k + 1) % 3]
        area = 0.5 * np.linalg.norm(np.cross(b - point, c - point))
        T, Wp = np.meshgrid(t, w, indexing="ij")
        pts = point + T[..., None] * ((b - point) + Wp[..., None] * (c - b))
        nodes.append(pts.reshape(-1, 3))
        weights.append((2.0 * area * T * tw[:, None] * ww[None, :]).ravel())
    return np.vstack(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# identical-panel integrals through the autocorrelation of the triangle

def _autocorrelation_frame(corners):
    """Per-panel sector breakpoints and the gauge ``c(theta)`` of T - T.

    The overlap area of a triangle with its translate by ``z`` equals
    ``|T| (1 - c(z))**2`` where ``c(z) = sum_i |grad(lambda_i) . z| / 2``.
    """
    corners = np.asarray(corners, dtype=float)
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 0, :]
    l1 = np.linalg.norm(e1, axis=-1)
    u = e1 / l1[..., None]
    nrm = np.cross(e1, e2)
    area = 0.5 * np.linalg.norm(nrm, axis=-1)
    v = np.cross(nrm / (2 * area)[..., None], u)
    # 2-D edge matrix [[P1 - P0], [P2 - P0]] in the (u, v) frame
    E = np.stack(
        [
            np.stack([l1, np.zeros_like(l1)], axis=-1),
            np.stack([np.einsum("...k,...k->...", e2, u), np.einsum("...k,...k->...", e2, v)], axis=-1),
        ],
        axis=-1,
    )
    Einv = np.linalg.inv(E)
    g1, g2 = Einv[..., 0, :], Einv[..., 1, :]
    grads = np.stack([-(g1 + g2), g1, g2], axis=-2)
    ang = np.arctan2(grads[..., 1], grads[..., 0])
    brk = np.sort(np.mod(np.concatenate([ang + np.pi / 2, ang - np.pi / 2], axis=-1), 2 * np.pi), axis=-1)
    return area, grads, brk


def self_radial_integral(corners, radial, n_theta: int = 16, n_rho: int = 12):
    """``int_T int_T f(|x - y|) dx dy`` for each triangle.

    Parameters
    ----------
    corners : (n, 3, 3) or (3, 3) array
    radial : callable
        ``radial(rho)`` returning ``f(rho) * rho``, vectorized; it must be
        smooth on ``[0, diam]`` (the weak ``1/rho`` singularity is absorbed
        by the polar Jacobian).

    Notes
    -----
    The double integral is rewritten as the integral of the kernel against the
    triangle's autocorrelation and evaluated in polar coordinates, six smooth
    angular sectors times a Gauss rule in the radius.
    """
    corners = np.asarray(corners, dtype=float)
    single = corners.ndim == 2
    if single:
        corners = corners[None]
    area, grads, brk = _autocorrelation_frame(corners)
    lo = brk
    hi = np.concatenate([brk[:, 1:], brk[:, :1] + 2 * np.pi], axis=1)
    gt, gtw = gauss_legendre(n_theta)
    theta = lo[:, :, None] + (hi - lo)[:, :, None] * gt
    wtheta = (hi - lo)[:, :, None] * gtw
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    c = 0.5 * np.abs(np.einsum("nsqd,nid->nsqi", dirs, grads)).sum(axis=-1)
    L = 1.0 / c
    gr, grw = gauss_legendre(n_rho)
    rho = L[..., None] * gr
    inner = (L[..., None] * grw * (1.0 - gr) ** 2 * radial(rho)).sum(axis=-1)
    out = area * (wtheta * inner).sum(axis=(1, 2))
    return out[0] if single else out


def weak_singular_self(panel, kernel, n_theta: int = 16, n_rho: int = 12):
    """Galerkin self-integral of a radial kernel with at most a ``1/r`` singularity.

    ``kernel(r)`` is evaluated at strictly positive radii only.
    """
    return self_radial_integral(panel, lambda r: kernel(r) * r, n_theta, n_rho)


def pv_self_contribution(panel, params: PhysicalParams | None = None, point=None, n: int = 16):
    """Collocation self-contribution of the Pauli block at a point of a flat panel.

    Returns the 2x2 matrix ``PV int_T w^a(x0 - y) dy``.  The odd static part
    ``i sigma.(x0 - y)/(4 pi |x0 - y|**3)`` is the in-plane part of the
    closed-form panel field, equivalently a boundary integral
    of the outward edge normal against ``1/|x0 - y|``, which vanishes when the
    panel is centrally symmetric about ``x0``; the bounded remainder is
    integrated with a Duffy rule centred at ``x0``.
    """
    from ._pycore import triangle_static, vrem_numerator

    panel = np.asarray(panel, dtype=float)
    x0 = panel.mean(axis=0) if point is None else np.asarray(point, dtype=float)
    _, fld = triangle_static(x0[None], panel[None])
    # an in-plane point sees a one-sided limit; the odd PV has no normal part
    nrm = np.cross(panel[1] - panel[0], panel[2] - panel[0])
    nrm /= np.linalg.norm(nrm)
    vec = (fld[0] - np.dot(fld[0], nrm) * nrm) / (4 * np.pi)
    if params is not None and params.kappa > 0.0:
        nodes, w = point_duffy_rule(panel, x0, n)
        dx = x0 - nodes
        r = np.linalg.norm(dx, axis=1)
        g = vrem_numerator(params.kappa * r) / (4 * np.pi * r**3)
        vec = vec + (w * g) @ dx
    return 1j * np.tensordot(vec, PAULI, axes=1)


def classify_pair(panel_i, panel_j, eta: float = 2.0) -> PanelPairClass:
    """Proximity class of two panels given as (3, 3) corner arrays.

    Shared corners are detected by exact coordinate equality, as produced by
    indexed meshes.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    pi = np.asarray(panel_i, dtype=float)
    pj = np.asarray(panel_j, dtype=float)
    shared = sum(bool(np.any(np.all(pj == v, axis=1))) for v in pi)
    if shared == 3:
        return PanelPairClass.IDENTICAL
    if shared == 2:
        return PanelPairClass.EDGE
    if shared == 1:
        return PanelPairClass.VERTEX
    diam = max(_diameter(pi), _diameter(pj))
    dist = np.linalg.norm(pi.mean(axis=0) - pj.mean(axis=0))
    return PanelPairClass.NEAR if dist < eta * diam else PanelPairClass.FAR


def _diameter(p):
    return max(np.linalg.norm(p[0] - p[1]), np.linalg.norm(p[1] - p[2]), np.linalg.norm(p[2] - p[0]))
