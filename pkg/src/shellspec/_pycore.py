"""Pure numpy implementation of the assembly hot loops.

Mirrors the compiled ``_ccore`` module function for function; the package
selects one of the two at import time.
"""

from __future__ import annotations

import numpy as np

FOUR_PI = 4.0 * np.pi
_TINY = 1e-300
_CHUNK = 4096

# Taylor coefficients of exp(-t) (1 + t) - 1, starting at t**2
_VREM_SERIES = (-1.0 / 2.0, 1.0 / 3.0, -1.0 / 8.0, 1.0 / 30.0, -1.0 / 144.0, 1.0 / 840.0)


def vrem_numerator(t):
    """``exp(-t) (1 + t) - 1`` without cancellation for small ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.expm1(-t) + t * np.exp(-t)
    small = t < 2e-2
    if np.any(small):
        ts = t[small]
        acc = np.zeros_like(ts)
        for c in reversed(_VREM_SERIES):
            acc = acc * ts + c
        out[small] = acc * ts * ts
    return out


def triangle_static(x, tri):
    """Potential and field of unit-density flat triangles.

    Parameters
    ----------
    x : (m, 3) array
        Observation points.
    tri : (m, 3, 3) array
        Triangle corners, paired elementwise with ``x``.

    Returns
    -------
    pot : (m,) array
        ``int_T 1/|x - y| dy``.
    fld : (m, 3) array
        ``int_T (x - y)/|x - y|**3 dy``; the in-plane principal value when
        ``x`` lies inside the triangle.
    """
    x = np.asarray(x, dtype=float)
    tri = np.asarray(tri, dtype=float)
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    d = np.einsum("ij,ij->i", x - tri[:, 0], nrm)
    ad = np.abs(d)
    pot = np.zeros(len(x))
    fld = np.zeros((len(x), 3))
    beta_sum = np.zeros(len(x))
    for k in range(3):
        pm = tri[:, k]
        pp = tri[:, (k + 1) % 3]
        edge = pp - pm
        s = edge / np.linalg.norm(edge, axis=1)[:, None]
        u = np.cross(s, nrm)
        rm = pm - x
        rp = pp - x
        lm = np.einsum("ij,ij->i", rm, s)
        lp = np.einsum("ij,ij->i", rp, s)
        p0 = np.einsum("ij,ij->i", rm, u)
        Rm = np.linalg.norm(rm, axis=1)
        Rp = np.linalg.norm(rp, axis=1)
        r02 = p0 * p0 + d * d
        fwd = lp + lm >= 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            f2 = np.where(
                fwd,
                np.log((Rp + lp) / np.where(fwd, Rm + lm, 1.0)),
                np.log((Rm - lm) / np.where(fwd, 1.0, Rp - lp)),
            )
            beta = np.arctan(p0 * lp / (r02 + ad * Rp)) - np.arctan(p0 * lm / (r02 + ad * Rm))
        degenerate = r02 <= _TINY
        beta = np.where(degenerate, 0.0, beta)
        pot += np.where(degenerate, 0.0, p0 * f2)
        fld += u * np.where(degenerate, 0.0, f2)[:, None]
        beta_sum += beta
    pot -= ad * beta_sum
    fld += nrm * (np.sign(d) * beta_sum)[:, None]
    return pot, fld


def radial_terms(dx, kappa, a, mode):
    """Radial kernel factors for separation vectors ``dx`` of shape (..., 3).

    ``mode`` selects the family:

    ``"full"``
        ``s = exp(-kappa r)/(4 pi r)``, ``v = exp(-kappa r)(1 + kappa r)/(4 pi r**3)``.
    ``"rem"``
        The same minus their static (``kappa = 0``) parts.
    ``"deriv"``
        ``p = a exp(-kappa r)/(4 pi kappa)`` and ``u = a exp(-kappa r)/(4 pi r)``.

    Returns the scalar factor and the factor multiplying ``dx``.
    """
    r = np.sqrt(np.einsum("...k,...k->...", dx, dx))
    t = kappa * r
    if mode == "full":
        e = np.exp(-t)
        return e / (FOUR_PI * r), e * (1.0 + t) / (FOUR_PI * r**3)
    if mode == "rem":
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, np.expm1(-t) / (FOUR_PI * r), -kappa / FOUR_PI)
            v = np.where(r > 0, vrem_numerator(t) / (FOUR_PI * r**3), 0.0)
        return s, v
    if mode == "deriv":
        e = np.exp(-t)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(r > 0, a * e / (FOUR_PI * r), 0.0)
        return a * e / (FOUR_PI * kappa), u
    raise ValueError(f"unknown kernel mode {mode!r}")


def pair_integrals(xo, wo, yi, wi, kappa, a, mode):
    """Tensor quadrature of the scalar and vector kernels over panel pairs.

    Parameters
    ----------
    xo : (p, q1, 3) array
        Outer nodes per pair; ``wo`` (p, q1) their weights (area included).
    yi : (p, q2, 3) array
        Inner nodes per pair; ``wi`` (p, q2) their weights.

    Returns
    -------
    sval : (p,) array
    vval : (p, 3) array
        ``sum_ab wo_a wi_b s(x_a - y_b)`` and the vector analogue.
    """
    npair = xo.shape[0]
    sval = np.empty(npair)
    vval = np.empty((npair, 3))
    step = max(1, _CHUNK * 64 // (xo.shape[1] * yi.shape[1]))
    for lo in range(0, npair, step):
        hi = min(npair, lo + step)
        dx = xo[lo:hi, :, None, :] - yi[lo:hi, None, :, :]
        s, v = radial_terms(dx, kappa, a, mode)
        w = wo[lo:hi, :, None] * wi[lo:hi, None, :]
        sval[lo:hi] = np.einsum("pab,pab->p", w, s)
        vval[lo:hi] = np.einsum("pab,pabk->pk", w * v, dx)
    return sval, vval


def far_field(nodes, weights, mask, kappa, a, mode, threads=1):
    """Regular-rule integrals over every unordered pair not flagged in ``mask``.

    Parameters
    ----------
    nodes : (n, q, 3) array
        One rule per panel; ``weights`` (n, q) already include the panel area.
    mask : (n, n) uint8 array
        Nonzero entries mark pairs handled elsewhere (near field, diagonal).

    Returns
    -------
    smat : (n, n) array
        Symmetric scalar integrals, zero on masked entries.
    vmat : (3, n, n) array
        Antisymmetric vector integrals ``int int v(r) (x - y)``.
    """
    del threads
    n = nodes.shape[0]
    smat = np.zeros((n, n))
    vmat = np.zeros((3, n, n))
    iu, ju = np.triu_indices(n, 1)
    keep = mask[iu, ju] == 0
    iu, ju = iu[keep], ju[keep]
    step = 65536
    for lo in range(0, len(iu), step):
        ii, jj = iu[lo : lo + step], ju[lo : lo + step]
        sv, vv = pair_integrals(nodes[ii], weights[ii], nodes[jj], weights[jj], kappa, a, mode)
        smat[ii, jj] = sv
        smat[jj, ii] = sv
        vmat[:, ii, jj] = vv.T
        vmat[:, jj, ii] = -vv.T
    return smat, vmat
