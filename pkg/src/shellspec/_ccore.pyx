# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled assembly loops; same interface as ``_pycore``."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport atan, exp, expm1, fabs, log, sqrt

cnp.import_array()

cdef double FOUR_PI = 12.566370614359172
cdef double TINY = 1e-300


cdef inline double vrem_num(double t) noexcept nogil:
    # exp(-t) (1 + t) - 1 without cancellation
    cdef double acc
    if t < 2e-2:
        acc = 1.0 / 840.0
        acc = acc * t - 1.0 / 144.0
        acc = acc * t + 1.0 / 30.0
        acc = acc * t - 1.0 / 8.0
        acc = acc * t + 1.0 / 3.0
        acc = acc * t - 0.5
        return acc * t * t
    return expm1(-t) + t * exp(-t)


cdef inline void radial(double r, double kappa, double a, int mode,
                        double *s, double *v) noexcept nogil:
    cdef double t = kappa * r
    cdef double e
    if mode == 0:
        e = exp(-t)
        s[0] = e / (FOUR_PI * r)
        v[0] = e * (1.0 + t) / (FOUR_PI * r * r * r)
    elif mode == 1:
        if r > 0:
            s[0] = expm1(-t) / (FOUR_PI * r)
            v[0] = vrem_num(t) / (FOUR_PI * r * r * r)
        else:
            s[0] = -kappa / FOUR_PI
            v[0] = 0.0
    else:
        e = exp(-t)
        s[0] = a * e / (FOUR_PI * kappa)
        v[0] = a * e / (FOUR_PI * r) if r > 0 else 0.0


cdef int mode_code(str mode) except -1:
    if mode == "full":
        return 0
    if mode == "rem":
        return 1
    if mode == "deriv":
        return 2
    raise ValueError(f"unknown kernel mode {mode!r}")


cdef inline void one_pair(const double[:, :] xo, const double[:] wo,
                          const double[:, :] yi, const double[:] wi,
                          double kappa, double a, int mode,
                          double *sout, double *vout) noexcept nogil:
    cdef Py_ssize_t p, q
    cdef double dx, dy, dz, r, s, v, w
    cdef double ss = 0.0, v0 = 0.0, v1 = 0.0, v2 = 0.0
    for p in range(xo.shape[0]):
        for q in range(yi.shape[0]):
            dx = xo[p, 0] - yi[q, 0]
            dy = xo[p, 1] - yi[q, 1]
            dz = xo[p, 2] - yi[q, 2]
            r = sqrt(dx * dx + dy * dy + dz * dz)
            radial(r, kappa, a, mode, &s, &v)
            w = wo[p] * wi[q]
            ss += w * s
            v0 += w * v * dx
            v1 += w * v * dy
            v2 += w * v * dz
    sout[0] = ss
    vout[0] = v0
    vout[1] = v1
    vout[2] = v2


def pair_integrals(xo, wo, yi, wi, double kappa, double a, str mode):
    """Tensor quadrature over panel pairs; see ``_pycore.pair_integrals``."""
    cdef const double[:, :, :] X = np.ascontiguousarray(xo, dtype=np.float64)
    cdef const double[:, :] WX = np.ascontiguousarray(wo, dtype=np.float64)
    cdef const double[:, :, :] Y = np.ascontiguousarray(yi, dtype=np.float64)
    cdef const double[:, :] WY = np.ascontiguousarray(wi, dtype=np.float64)
    cdef Py_ssize_t npair = X.shape[0], k
    cdef int mc = mode_code(mode)
    sval = np.empty(npair)
    vval = np.empty((npair, 3))
    cdef double[:] S = sval
    cdef double[:, :] V = vval
    cdef double vtmp[3]
    with nogil:
        for k in range(npair):
            one_pair(X[k], WX[k], Y[k], WY[k], kappa, a, mc, &S[k], vtmp)
            V[k, 0] = vtmp[0]
            V[k, 1] = vtmp[1]
            V[k, 2] = vtmp[2]
    return sval, vval


def far_field(nodes, weights, mask, double kappa, double a, str mode, int threads=1):
    """Regular-rule integrals over unmasked unordered pairs; see ``_pycore.far_field``."""
    cdef const double[:, :, :] X = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef const double[:, :] W = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const cnp.uint8_t[:, :] M = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = X.shape[0], i, j
    cdef int mc = mode_code(mode)
    smat = np.zeros((n, n))
    vmat = np.zeros((3, n, n))
    cdef double[:, :] S = smat
    cdef double[:, :, :] V = vmat
    cdef double sv
    cdef double vv[3]
    for i in prange(n, nogil=True, schedule="dynamic", num_threads=max(threads, 1)):
        for j in range(i + 1, n):
            if M[i, j]:
                continue
            one_pair(X[i], W[i], X[j], W[j], kappa, a, mc, &sv, vv)
            S[i, j] = sv
            S[j, i] = sv
            V[0, i, j] = vv[0]
            V[1, i, j] = vv[1]
            V[2, i, j] = vv[2]
            V[0, j, i] = -vv[0]
            V[1, j, i] = -vv[1]
            V[2, j, i] = -vv[2]
    return smat, vmat


cdef inline void cross(const double *a, const double *b, double *out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double dot(const double *a, const double *b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def triangle_static(x, tri):
    """Potential and field of unit-density triangles; see ``_pycore.triangle_static``."""
    cdef const double[:, :] P = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, :] T = np.ascontiguousarray(tri, dtype=np.float64)
    cdef Py_ssize_t m = P.shape[0], k, e, c
    pot_arr = np.zeros(m)
    fld_arr = np.zeros((m, 3))
    cdef double[:] pot = pot_arr
    cdef double[:, :] fld = fld_arr
    cdef double e1[3], e2[3], nrm[3], s[3], u[3], rm[3], rp[3]
    cdef double nn, d, ad, lm, lp, p0, Rm, Rp, r02, f2, beta, bsum, sgn, el
    with nogil:
        for k in range(m):
            for c in range(3):
                e1[c] = T[k, 1, c] - T[k, 0, c]
                e2[c] = T[k, 2, c] - T[k, 0, c]
            cross(e1, e2, nrm)
            nn = sqrt(dot(nrm, nrm))
            for c in range(3):
                nrm[c] /= nn
            d = 0.0
            for c in range(3):
                d += (P[k, c] - T[k, 0, c]) * nrm[c]
            ad = fabs(d)
            bsum = 0.0
            for e in range(3):
                for c in range(3):
                    s[c] = T[k, (e + 1) % 3, c] - T[k, e, c]
                el = sqrt(dot(s, s))
                for c in range(3):
                    s[c] /= el
                cross(s, nrm, u)
                for c in range(3):
                    rm[c] = T[k, e, c] - P[k, c]
                    rp[c] = T[k, (e + 1) % 3, c] - P[k, c]
                lm = dot(rm, s)
                lp = dot(rp, s)
                p0 = dot(rm, u)
                Rm = sqrt(dot(rm, rm))
                Rp = sqrt(dot(rp, rp))
                r02 = p0 * p0 + d * d
                if r02 <= TINY:
                    continue
                if lp + lm >= 0.0:
                    f2 = log((Rp + lp) / (Rm + lm))
                else:
                    f2 = log((Rm - lm) / (Rp - lp))
                beta = atan(p0 * lp / (r02 + ad * Rp)) - atan(p0 * lm / (r02 + ad * Rm))
                pot[k] += p0 * f2
                for c in range(3):
                    fld[k, c] += u[c] * f2
                bsum += beta
            pot[k] -= ad * bsum
            sgn = 1.0 if d > 0 else (-1.0 if d < 0 else 0.0)
            for c in range(3):
                fld[k, c] += nrm[c] * sgn * bsum
    return pot_arr, fld_arr
