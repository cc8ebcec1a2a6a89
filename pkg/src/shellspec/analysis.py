"""Experiments built on the discrete operators.

Eigenvalue curves of the Dirac boundary operator in the spectral parameter,
coupling-constant sets and their symmetries, operator identities measured on
refinement ladders, the capacity-based isoperimetric report and the
two-copy splitting experiment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .assembly import (
    DenseOperator,
    assemble_C,
    assemble_dC_da,
    assemble_K,
    assemble_W,
    assembler_for,
    evaluate_potential,
    multiplier,
)
from .capacity import capacity, polya_szego_rhs
from .kernels import PhysicalParams
from .mesh import SurfaceMesh, two_copy
from .spectral import (
    _groups,
    all_eigenvalues,
    clustered_eigenpairs,
    lambda_omega_bisect,
    lambda_omega_qep,
    operator_norm,
    weighted_hermitian_eig,
)

__all__ = [
    "MatchingLostWarning",
    "EigencurveSet",
    "CouplingSet",
    "ShapeReport",
    "IdentityRow",
    "SplitRow",
    "smooth_basis",
    "restricted_norm",
    "observed_orders",
    "eigencurves",
    "volume_derivative_check",
    "coupling_set",
    "endpoint_coupling",
    "identity_suite",
    "jump_residuals",
    "sphere_checks",
    "isoperimetric_report",
    "capacity_bounds",
    "split_experiment",
]

OVERLAP_THRESHOLD = 0.7


class MatchingLostWarning(RuntimeWarning):
    """An eigenvalue curve could not be continued across a grid step."""


# ---------------------------------------------------------------------------
# smooth test subspace

def smooth_basis(mesh: SurfaceMesh, d: int = 4) -> np.ndarray:
    """Weighted-orthonormal panel densities from harmonic polynomials of degree <= 2.

    The nine polynomials ``1, x, y, z, xy, yz, zx, x^2-y^2, x^2+y^2-2z^2``
    are evaluated at centroids (centred and scaled to unit RMS radius) and
    multiplied by the ``d`` unit spinors.  Columns are orthonormal in the
    area-weighted inner product.
    """
    c = mesh.centroids - np.average(mesh.centroids, axis=0, weights=mesh.areas)
    c = c / np.sqrt(np.average(np.sum(c * c, axis=1), weights=mesh.areas))
    x, y, z = c.T
    polys = [np.ones_like(x), x, y, z, x * y, y * z, z * x, x * x - y * y, x * x + y * y - 2 * z * z]
    n = mesh.n_panels
    F = np.zeros((n, d, len(polys), d))
    for p, f in enumerate(polys):
        for s in range(d):
            F[:, s, p, s] = f
    F = F.reshape(n * d, len(polys) * d)
    sw = np.sqrt(np.repeat(mesh.areas, d))
    U, sv, _ = np.linalg.svd(F * sw[:, None], full_matrices=False)
    U = U[:, sv > 1e-10 * sv[0]]
    return (U / sw[:, None]).astype(complex)


def restricted_norm(apply, Q: np.ndarray, weight: np.ndarray) -> float:
    """Weighted operator norm of ``apply`` restricted to the span of ``Q``."""
    Y = apply(Q)
    return float(np.linalg.norm(Y * np.sqrt(weight)[:, None], 2))


def observed_orders(values, sizes) -> np.ndarray:
    """Convergence orders ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})`` along a ladder."""
    v = np.asarray(values, dtype=float)
    h = np.asarray(sizes, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(v[:-1] / v[1:]) / np.log(h[:-1] / h[1:])


def _h(mesh: SurfaceMesh) -> float:
    return float(np.mean(mesh.diameters))


# ---------------------------------------------------------------------------
# identities

@dataclass
class IdentityRow:
    """Residuals of the operator identities at one spectral parameter.

    ``clifford`` is the norm of ``4 (C (alpha.N))^2 + I``, ``anticommutator``
    the norm of ``{(sigma.N) K, (sigma.N) W}`` and ``quadratic`` the norm of
    ``((sigma.N) W)^2 + (a^2 - m^2) ((sigma.N) K)^2 + 1/4``, all restricted
    to the smooth subspace.  ``jump_interior`` and ``jump_exterior`` are the
    relative pointwise jump residuals when a jump offset was requested.
    """

    a: float
    m: float
    h: float
    n_panels: int
    clifford: float
    anticommutator: float
    quadratic: float
    jump_interior: float = float("nan")
    jump_exterior: float = float("nan")

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def identity_suite(mesh: SurfaceMesh, m: float, a_list, jump_eps: float | None = None,
                   jump_samples: int = 96) -> list:
    """Residuals of the boundary-operator identities for each ``a`` in ``a_list``.

    Parameters
    ----------
    mesh : SurfaceMesh
    m : float
    a_list : sequence of float
        Spectral parameters in ``[-m, m]``.
    jump_eps : float, optional
        Normal offset for the jump-formula check; skipped when ``None``.
    jump_samples : int
        Number of panels sampled for the jump check.

    Returns
    -------
    list of IdentityRow
    """
    asm = assembler_for(mesh)
    Q4 = smooth_basis(mesh, 4)
    Q2 = smooth_basis(mesh, 2)
    w4 = np.repeat(mesh.areas, 4)
    w2 = np.repeat(mesh.areas, 2)
    MA = multiplier(mesh, "alpha")
    MS = multiplier(mesh, "sigma")
    rows = []
    for a in a_list:
        p = PhysicalParams(m, float(a))
        C = assemble_C(mesh, p, asm)
        K = assemble_K(mesh, p, asm)
        W = assemble_W(mesh, p, asm)

        def clifford(X):
            Y = C.matmat(MA.matmat(X))
            Y = C.matmat(MA.matmat(Y))
            return 4.0 * Y + X

        def sk(X):
            return MS.matmat(K.matmat(X))

        def sw(X):
            return MS.matmat(W.matmat(X))

        def anti(X):
            return sk(sw(X)) + sw(sk(X))

        def quad(X):
            return sw(sw(X)) + (p.a**2 - p.m**2) * sk(sk(X)) + 0.25 * X

        row = IdentityRow(
            float(a), float(m), _h(mesh), mesh.n_panels,
            restricted_norm(clifford, Q4, w4),
            restricted_norm(anti, Q2, w2),
            restricted_norm(quad, Q2, w2),
        )
        if jump_eps is not None:
            ji, je = jump_residuals(mesh, p, jump_eps, samples=jump_samples, C=C)
            row.jump_interior, row.jump_exterior = ji, je
        rows.append(row)
    return rows


def _jump_density(mesh: SurfaceMesh) -> np.ndarray:
    """A fixed smooth 4-spinor density used by the jump check."""
    c = mesh.centroids - np.average(mesh.centroids, axis=0, weights=mesh.areas)
    x, y, z = c.T
    g = np.stack([1.0 + 0.5 * x, 0.3 * y + 0.2j * z, 0.4j * x - 0.1 * z, 0.25 * (x * y) + 0.5], axis=1)
    return g.astype(complex).ravel()


def jump_residuals(mesh: SurfaceMesh, p: PhysicalParams, eps: float, samples: int = 96,
                   g=None, C: DenseOperator | None = None):
    """Relative residuals of the two normal-approach limits.

    At sampled centroids ``x``, the potential at ``x - eps N`` (inside) is
    compared with ``C g - (i/2)(alpha.N) g`` and at ``x + eps N`` (outside)
    with ``C g + (i/2)(alpha.N) g``.  Residuals are maxima over the samples
    divided by ``max |g|``.

    Returns
    -------
    (interior, exterior) : tuple of float
    """
    g = _jump_density(mesh) if g is None else np.asarray(g, dtype=complex)
    C = assemble_C(mesh, p) if C is None else C
    n = mesh.n_panels
    idx = np.unique(np.linspace(0, n - 1, min(samples, n)).round().astype(int))
    Cg = C.matmat(g).reshape(n, 4)[idx]
    Mg = multiplier(mesh, "alpha").matmat(g).reshape(n, 4)[idx]
    x = mesh.centroids[idx]
    N = mesh.normals[idx]
    scale = np.max(np.abs(g))
    inside = evaluate_potential(mesh, g, x - eps * N, p)
    outside = evaluate_potential(mesh, g, x + eps * N, p)
    ri = np.max(np.abs(inside - (Cg - 0.5j * Mg))) / scale
    re = np.max(np.abs(outside - (Cg + 0.5j * Mg))) / scale
    return float(ri), float(re)


def sphere_checks(mesh: SurfaceMesh, m: float, a: float, n_random: int = 8, seed: int = 0) -> dict:
    """Sphere-specific diagnostics: ``{sigma.N, W}`` and the isometry of ``2 W``.

    Both are measured on the smooth subspace; the isometry check reports
    the worst ``| |2 W f| / |f| - 1 |`` over random smooth ``f``.
    """
    p = PhysicalParams(m, a)
    W = assemble_W(mesh, p)
    MS = multiplier(mesh, "sigma")
    Q = smooth_basis(mesh, 2)
    w = np.repeat(mesh.areas, 2)
    anti = restricted_norm(lambda X: MS.matmat(W.matmat(X)) + W.matmat(MS.matmat(X)), Q, w)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_random):
        coef = rng.standard_normal(Q.shape[1]) + 1j * rng.standard_normal(Q.shape[1])
        f = Q @ coef
        worst = max(worst, abs(2.0 * W.norm(W.matmat(f)) / W.norm(f) - 1.0))
    return {"a": float(a), "m": float(m), "anticommutator_sigmaN_W": anti, "isometry_defect": float(worst)}


# ---------------------------------------------------------------------------
# eigenvalue clusters and curves

@dataclass
class _Cluster:
    value: float
    Q: np.ndarray  # weighted-orthonormal columns

    @property
    def dim(self):
        return self.Q.shape[1]


def _clusters(C: DenseOperator, n_clusters: int, which: str = "LM", tol: float = 1e-7):
    """The ``n_clusters`` eigenvalue clusters at one end of the spectrum, each complete.

    Degenerate eigenvalues (Kramers pairs, symmetry multiplets) are kept
    together as one cluster with its mean value.  ``which`` is ``"LM"``
    (largest magnitude first) or ``"SA"`` (lowest value first).
    """
    k = max(4 * n_clusters, 16)
    while True:
        rep = clustered_eigenpairs(C, k, which, cluster_tol=tol)
        groups = _groups(rep.eigenvalues, tol)
        if len(groups) >= n_clusters or k >= C.shape[0] - 2:
            break
        k *= 2
    if which == "LM":
        groups.sort(key=lambda gr: -abs(np.mean(rep.eigenvalues[gr])))
    else:
        groups.sort(key=lambda gr: np.mean(rep.eigenvalues[gr]))
    return [_Cluster(float(np.mean(rep.eigenvalues[gr])), rep.eigenvectors[:, gr]) for gr in groups[:n_clusters]]


def _overlap(A: _Cluster, B: _Cluster, weight: np.ndarray) -> float:
    G = (A.Q.conj().T * weight[None, :]) @ B.Q
    return float(np.sum(np.abs(G) ** 2) / max(A.dim, B.dim))


def _match(prev, cur, weight):
    """Greedy maximum-overlap assignment ``prev index -> cur index``."""
    if not prev or not cur:
        return {}, {}
    O = np.array([[_overlap(p, c, weight) for c in cur] for p in prev])
    pairs = sorted(((O[i, j], i, j) for i in range(len(prev)) for j in range(len(cur))), key=lambda t: (-t[0], t[1], t[2]))
    used_i, used_j, out, ov = set(), set(), {}, {}
    for o, i, j in pairs:
        if o <= OVERLAP_THRESHOLD:
            break
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        out[i] = j
        ov[i] = o
    return out, ov


@dataclass
class EigencurveSet:
    """Matched eigenvalue curves over a grid of spectral parameters.

    ``values[j, i]`` is the cluster-mean eigenvalue of curve ``j`` at
    ``a_grid[i]`` (NaN after the curve was lost), ``multiplicity[j]`` its
    cluster size.  ``deriv_fd`` holds central differences with step ``h``
    and ``deriv_form`` the quadratic-form derivative averaged over the
    cluster; ``deriv_form_min`` is the smallest individual form value.
    """

    a_grid: np.ndarray
    m: float
    h: float
    values: np.ndarray
    multiplicity: np.ndarray
    overlaps: np.ndarray
    deriv_fd: np.ndarray
    deriv_form: np.ndarray
    deriv_form_min: np.ndarray
    truncated: list = field(default_factory=list)
    mesh_id: str = ""

    @property
    def n_curves(self) -> int:
        return self.values.shape[0]

    def increasing(self) -> np.ndarray:
        """Per curve: strictly increasing wherever it is defined."""
        out = []
        for row in self.values:
            v = row[np.isfinite(row)]
            out.append(bool(np.all(np.diff(v) > 0)))
        return np.array(out)

    def derivative_gap(self) -> np.ndarray:
        """Relative gap ``|fd - form| / |form|`` per curve and grid point."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.abs(self.deriv_fd - self.deriv_form) / np.abs(self.deriv_form)

    def as_dict(self) -> dict:
        def lst(x):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in x]

        return {
            "mesh_id": self.mesh_id,
            "m": float(self.m),
            "h": float(self.h),
            "a_grid": [float(a) for a in self.a_grid],
            "values": lst(self.values),
            "multiplicity": [int(k) for k in self.multiplicity],
            "overlaps": lst(self.overlaps),
            "deriv_fd": lst(self.deriv_fd),
            "deriv_form": lst(self.deriv_form),
            "deriv_form_min": lst(self.deriv_form_min),
            "increasing": [bool(b) for b in self.increasing()],
            "truncated": list(self.truncated),
        }


FULL_TRACK_LIMIT = 2048


def _spectrum_clusters(C: DenseOperator, n_pool: int, tol: float = 1e-7):
    """Candidate clusters for matching: the whole spectrum when affordable."""
    if C.shape[0] <= FULL_TRACK_LIMIT:
        rep = weighted_hermitian_eig(C, dense_limit=FULL_TRACK_LIMIT)
        return [_Cluster(float(np.mean(rep.eigenvalues[gr])), rep.eigenvectors[:, gr])
                for gr in _groups(rep.eigenvalues, tol)]
    return _clusters(C, n_pool, "LM", tol)


def _track(tracked, pool, weight):
    """Follow each tracked cluster into ``pool``; ``None`` where matching fails."""
    mp, ov = _match([c for c in tracked if c is not None], pool, weight)
    out, overlaps, pos = [], [], 0
    for c in tracked:
        if c is None:
            out.append(None)
            overlaps.append(np.nan)
            continue
        j = mp.get(pos)
        if j is not None and pool[j].dim == c.dim:
            out.append(pool[j])
            overlaps.append(ov[pos])
        else:
            out.append(None)
            overlaps.append(np.nan)
        pos += 1
    return out, overlaps


def eigencurves(mesh: SurfaceMesh, m: float, a_grid, k: int = 8, h: float | None = None,
                with_derivatives: bool = True, max_step: float | None = None,
                max_refine: int = 7) -> EigencurveSet:
    """Track the ``k`` largest-magnitude eigenvalue clusters of ``C^a`` across ``a_grid``.

    Curves are followed by eigenspace overlap through a chain of parameter
    values that contains the grid, the finite-difference stencil points and
    extra points so that consecutive values are at most ``max_step`` apart.
    Each step is matched against the whole discrete spectrum (or a wide
    window of it for large meshes), so a curve may pass through the bulk
    of the spectrum as long as its eigenspace stays identifiable.

    Parameters
    ----------
    mesh : SurfaceMesh
    m : float
    a_grid : increasing sequence inside ``(-m, m)``
    k : int
        Number of clusters tracked, chosen by magnitude at the first grid point.
    h : float, optional
        Central-difference step, default ``0.05 m``.
    with_derivatives : bool
        Compute both derivative estimates at every grid point.
    max_step : float, optional
        Largest spacing of the tracking chain, default ``0.12 m``.
    max_refine : int
        A step on which a curve loses its match is halved up to this many
        times before the curve is truncated.

    Warns
    -----
    MatchingLostWarning
        A curve is truncated when, even on the finest refined step, no
        cluster overlaps it by more than 0.7 with the same multiplicity.
    """
    a_grid = np.asarray(a_grid, dtype=float)
    if a_grid.ndim != 1 or len(a_grid) < 2 or np.any(np.diff(a_grid) <= 0):
        raise ValueError("a_grid must be strictly increasing with at least two points")
    if np.any(np.abs(a_grid) >= m):
        raise ValueError("a_grid must lie strictly inside (-m, m)")
    h = 0.05 * m if h is None else float(h)
    max_step = 0.12 * m if max_step is None else float(max_step)
    if with_derivatives and (np.any(np.abs(a_grid) + h >= m) or h >= 0.5 * np.min(np.diff(a_grid))):
        raise ValueError("finite-difference stencil leaves (-m, m) or overlaps neighbouring grid points")
    asm = assembler_for(mesh)
    weight = np.repeat(mesh.areas, 4)
    n_pool = 4 * k + 8

    def pool_at(a):
        return _spectrum_clusters(assemble_C(mesh, PhysicalParams(m, a), asm), n_pool)

    # chain of parameter values, tagged (grid index, offset) or None for fillers
    marks = []
    for i, a in enumerate(a_grid):
        if with_derivatives:
            marks += [(a - h, (i, -1)), (a, (i, 0)), (a + h, (i, 1))]
        else:
            marks.append((a, (i, 0)))
    chain = [marks[1 if with_derivatives else 0]]
    for val, tag in marks[(2 if with_derivatives else 1):]:
        prev = chain[-1][0]
        n_sub = int(np.ceil((val - prev) / max_step - 1e-12))
        for s_ in range(1, n_sub):
            chain.append((prev + (val - prev) * s_ / n_sub, None))
        chain.append((val, tag))

    G = len(a_grid)
    vals = np.full((k, G), np.nan)
    ovl = np.full((k, G), np.nan)
    side = {-1: np.full((k, G), np.nan), 1: np.full((k, G), np.nan)}
    dform = np.full((k, G), np.nan)
    dmin = np.full((k, G), np.nan)
    truncated = []

    start_pool = pool_at(a_grid[0])
    start_pool.sort(key=lambda c: -abs(c.value))
    tracked = start_pool[:k]
    k = len(tracked)
    mult = np.array([c.dim for c in tracked])
    running = np.ones(k)  # smallest overlap since the last grid point
    states = {(0, 0): list(tracked)}

    def advance(cur, a0, a1, pool1, depth=0):
        # halve the step where a curve is lost; avoided crossings need fine steps
        nxt, ov = _track(cur, pool1, weight)
        lost = any(c is not None and n is None for c, n in zip(cur, nxt))
        if not lost or depth >= max_refine:
            return nxt, np.array(ov)
        mid = 0.5 * (a0 + a1)
        half, ov1 = advance(cur, a0, mid, pool_at(mid), depth + 1)
        nxt, ov2 = advance(half, mid, a1, pool1, depth + 1)
        return nxt, np.minimum(ov1, ov2)

    if with_derivatives:
        back, _ = advance(tracked, a_grid[0], a_grid[0] - h, pool_at(a_grid[0] - h))
        states[(0, -1)] = back
    prev_val = chain[0][0]
    for val, tag in chain[1:]:
        new, ov = advance(tracked, prev_val, val, pool_at(val))
        prev_val = val
        for j in range(k):
            if tracked[j] is not None and new[j] is None:
                truncated.append({"curve": j, "a": float(val)})
                warnings.warn(f"curve {j} lost at a = {val:.6g} (no overlap above {OVERLAP_THRESHOLD})",
                              MatchingLostWarning, stacklevel=2)
            elif new[j] is not None:
                running[j] = min(running[j], ov[j])
        tracked = new
        if tag is not None:
            states[tag] = list(tracked)
            if tag[1] == 0:
                ovl[:, tag[0]] = np.where([c is not None for c in tracked], running, np.nan)
                running = np.ones(k)

    for i, a in enumerate(a_grid):
        cur = states[(i, 0)]
        for j, c in enumerate(cur):
            if c is not None:
                vals[j, i] = c.value
        if not with_derivatives:
            continue
        for off in (-1, 1):
            for j, c in enumerate(states[(i, off)]):
                if c is not None:
                    side[off][j, i] = c.value
        if all(c is None for c in cur):
            continue
        D = assemble_dC_da(mesh, PhysicalParams(m, a), asm)
        for j, c in enumerate(cur):
            if c is None:
                continue
            forms = np.real(np.sum(weight[:, None] * D.matmat(c.Q) * c.Q.conj(), axis=0))
            dform[j, i] = float(np.mean(forms))
            dmin[j, i] = float(np.min(forms))
    dfd = (side[1] - side[-1]) / (2 * h)
    return EigencurveSet(a_grid, float(m), h, vals, mult, ovl, dfd, dform, dmin, truncated, mesh.digest())


# ---------------------------------------------------------------------------
# volume form of the derivative

def _ray_surface_distance(mesh: SurfaceMesh, center, dirs) -> np.ndarray:
    """Distance from ``center`` along unit ``dirs`` to the surface (single crossing)."""
    tri = mesh.corners()
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    out = np.empty(len(dirs))
    for k, dvec in enumerate(dirs):
        pvec = np.cross(dvec, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = center - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ dvec) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t > 0)
        ts = t[hit]
        if len(ts) == 0:
            raise ValueError("surface is not star-shaped about its centroid")
        if np.ptp(ts) > 1e-9 * ts.max():
            raise ValueError("surface is not star-shaped about its centroid")
        out[k] = ts.mean()
    return out


def volume_derivative_check(mesh: SurfaceMesh, m: float, a: float, g, R: float = 8.0,
                            n_theta: int = 12, n_phi: int = 24, n_radial: int = 12,
                            band: float = 0.03, max_R: float = 64.0) -> dict:
    """Compare ``<(dC/da) g, g>`` with the volume integral of ``|Phi^a(g)|^2``.

    The volume integral uses spherical shells about the mesh centroid with
    Gauss rules in ``cos(theta)`` and radius, a periodic rule in ``phi``, and
    splits each ray at the surface.  A band of relative half-width ``band``
    around the surface is filled by linear interpolation and counted in the
    error bar, and the exterior tail beyond ``R`` is bounded using the
    exponential decay rate ``sqrt(m^2 - a^2)``.  ``R`` is doubled until the
    tail is below 1e-3 of the integral.

    Returns
    -------
    dict with ``boundary_form``, ``volume_form``, ``error_bar``, ``tail``,
    ``R`` and ``relative_gap``.
    """
    p = PhysicalParams(m, a)
    if not p.interior:
        raise ValueError("volume check needs |a| < m")
    g = np.asarray(g, dtype=complex)
    D = assemble_dC_da(mesh, p)
    boundary = float(D.inner(D.matmat(g), g).real)
    if not np.any(g):
        return {"boundary_form": 0.0, "volume_form": 0.0, "error_bar": 0.0, "tail": 0.0,
                "R": float(R), "relative_gap": 0.0}
    center = np.average(mesh.centroids, axis=0, weights=mesh.areas)
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(),
                     np.repeat(ct, n_phi)], axis=1)
    wdir = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    rho = _ray_surface_distance(mesh, center, dirs)
    x, xw = np.polynomial.legendre.leggauss(n_radial)
    x, xw = 0.5 * (x + 1), 0.5 * xw
    kappa = p.kappa

    def shell(r0, r1):
        # (ndir, nr) radii and weights including r^2
        r = r0[:, None] + (r1 - r0)[:, None] * x[None, :]
        w = (r1 - r0)[:, None] * xw[None, :] * r**2
        return r, w

    def integrate(r, w):
        pts = center + (r[..., None] * dirs[:, None, :]).reshape(-1, 3)
        phi_vals = evaluate_potential(mesh, g, pts, p, min_distance=0.05)
        dens = np.sum(np.abs(phi_vals) ** 2, axis=1).reshape(r.shape)
        return dens, float(np.sum(wdir[:, None] * w * dens))

    lo_in, hi_out = rho * (1 - band), rho * (1 + band)
    r_in, w_in = shell(np.zeros_like(rho), lo_in)
    d_in, I_in = integrate(r_in, w_in)
    while True:
        r_out, w_out = shell(hi_out, np.full_like(rho, R))
        # geometric grading of the exterior: split into two shells
        mid = np.minimum(hi_out * 2.0, R)
        r_a, w_a = shell(hi_out, mid)
        r_b, w_b = shell(mid, np.full_like(rho, R))
        d_a, I_a = integrate(r_a, w_a)
        d_b, I_b = integrate(r_b, w_b)
        # tail beyond R: |Phi|^2 r^2 decays at least like exp(-2 kappa r)
        edge = d_b[:, -1] * r_b[:, -1] ** 2
        rate = max(2 * kappa, 1e-12)
        tail = float(np.sum(wdir * edge) / rate)
        total = I_in + I_a + I_b
        if tail <= 1e-3 * total or R >= max_R:
            break
        R *= 2.0
    # surface band by linear interpolation of the nearest samples
    inner_edge = d_in[:, -1]
    outer_edge = d_a[:, 0]
    band_vol = np.sum(wdir * 0.5 * (inner_edge + outer_edge) * (hi_out - lo_in) * rho**2)
    volume = total + float(band_vol) + tail
    err = float(abs(band_vol) + tail)
    gap = abs(volume - boundary) / max(abs(boundary), 1e-300)
    return {"boundary_form": boundary, "volume_form": volume, "error_bar": err, "tail": tail,
            "R": float(R), "relative_gap": float(gap)}


# ---------------------------------------------------------------------------
# coupling constants

@dataclass
class CouplingSet:
    """Leading coupling constants ``lambda_j = -1/c_j`` at one ``a``.

    ``partners[j]`` is the Rayleigh quotient of the partner density
    ``(alpha.N) g_j`` and ``symmetry_residuals[j]`` the distance from
    ``-1/(4 c_j)`` to the nearest eigenvalue of the discrete spectrum.  In coupling
    form the partner of ``lambda_j`` is ``-4/lambda_j``.
    """

    a: float
    m: float
    eigenvalues: np.ndarray
    lambdas: np.ndarray
    partners: np.ndarray
    symmetry_residuals: np.ndarray
    eigen_residuals: np.ndarray
    accumulation: dict
    mesh_id: str = ""

    @property
    def max_symmetry_residual(self) -> float:
        return float(np.max(self.symmetry_residuals)) if len(self.symmetry_residuals) else 0.0

    def as_dict(self) -> dict:
        return {
            "mesh_id": self.mesh_id,
            "a": float(self.a),
            "m": float(self.m),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "lambdas": [float(v) for v in self.lambdas],
            "partners": [float(v) for v in self.partners],
            "symmetry_residuals": [float(v) for v in self.symmetry_residuals],
            "eigen_residuals": [float(v) for v in self.eigen_residuals],
            "max_symmetry_residual": self.max_symmetry_residual,
            "accumulation": {k: float(v) for k, v in self.accumulation.items()},
        }


def _partner(C: DenseOperator, MA: DenseOperator, g: np.ndarray):
    """Rayleigh quotient and residual of ``(alpha.N) g``."""
    u = MA.matmat(g)
    Cu = C.matmat(u)
    nu = C.norm(u)
    rho = float(C.inner(Cu, u).real) / nu**2
    res = C.norm(Cu - rho * u) / nu
    return rho, float(res)


def coupling_set(mesh: SurfaceMesh, m: float, a: float, k: int = 16) -> CouplingSet:
    """Coupling constants from the ``k`` largest-magnitude eigenvalues of ``C^a``.

    The closure residual of an eigenvalue ``c`` is the distance from
    ``-1/(4c)`` to the nearest eigenvalue of the full discrete spectrum.
    ``partners`` holds the Rayleigh quotients of ``(alpha.N) g`` for each
    eigenvector ``g``, an independent estimate of the same partner values.
    """
    p = PhysicalParams(m, a)
    C = assemble_C(mesh, p)
    MA = multiplier(mesh, "alpha")
    top = clustered_eigenpairs(C, k, "LM")
    spec = np.sort(all_eigenvalues(C))
    partners, resid = [], []
    for j, c in enumerate(top.eigenvalues):
        rho, _ = _partner(C, MA, top.eigenvectors[:, j])
        partners.append(rho)
        target = -1.0 / (4.0 * c)
        pos = np.clip(np.searchsorted(spec, target), 1, len(spec) - 1)
        resid.append(float(min(abs(spec[pos] - target), abs(spec[pos - 1] - target))))
    nz = spec[np.abs(spec) > 0]
    dev = np.abs(1.0 / nz**2 - 4.0)
    acc = {
        "n_eigenvalues": float(len(nz)),
        "fraction_within_0.5_of_4": float(np.mean(dev < 0.5)),
        "median_abs_lambda2_minus_4": float(np.median(dev)),
    }
    return CouplingSet(float(a), float(m), top.eigenvalues, -1.0 / top.eigenvalues, np.array(partners),
                       np.array(resid), top.residuals, acc, mesh.digest())


def endpoint_coupling(mesh: SurfaceMesh, m: float, lambda_omega: float | None = None, rtol: float = 1e-6,
                      k: int = 16) -> dict:
    """Extremal coupling constants at ``a = +m`` and ``a = -m``.

    ``lambda_m_sup = sup{-1/c : c in spec(C^m)}`` is attained at the
    partner ``-1/(4 c_max)`` of the largest eigenvalue, so it equals
    ``4 c_max``.  The partner Rayleigh quotient gives an independent
    estimate (``*_partner``) with its residual bound.  Likewise
    ``lambda_minus_m_inf`` at ``a = -m`` from the smallest eigenvalue.  The two top-``k`` spectra are also
    compared as multisets (``spec(C^m)`` against ``-spec(C^{-m})``).
    """
    MA = multiplier(mesh, "alpha")
    out = {}
    specs = {}
    for sign, key in ((1.0, "plus"), (-1.0, "minus")):
        C = assemble_C(mesh, PhysicalParams(m, sign * m))
        rep = clustered_eigenpairs(C, k, "LM")
        specs[key] = rep.eigenvalues
        j = int(np.argmax(rep.eigenvalues)) if sign > 0 else int(np.argmin(rep.eigenvalues))
        rho, r = _partner(C, MA, rep.eigenvectors[:, j])
        out[key] = (float(rep.eigenvalues[j]), rho, r)
    c_max, rho_p, r_p = out["plus"]
    c_min, rho_m, r_m = out["minus"]
    lam_s = 4.0 * c_max
    lam_i = 4.0 * c_min
    n_common = min(len(specs["plus"]), len(specs["minus"]))
    a = np.sort(specs["plus"][:n_common])
    b = np.sort(-specs["minus"][:n_common])
    res = {
        "lambda_m_sup": float(lam_s),
        "lambda_m_sup_partner": float(-1.0 / rho_p),
        "lambda_minus_m_inf": float(lam_i),
        "lambda_minus_m_inf_partner": float(-1.0 / rho_m),
        "certificate_residual": float(max(r_p / rho_p**2, r_m / rho_m**2)),
        "inf_abs_lambda": float(4.0 / max(lam_s, -lam_i)),
        "endpoint_spectra_gap": float(np.max(np.abs(a - b))),
    }
    if lambda_omega is not None:
        gap = max(abs(lam_s - lambda_omega), abs(-lam_i - lambda_omega)) / lambda_omega
        res["lambda_omega"] = float(lambda_omega)
        res["relative_gap"] = float(gap)
        res["equals_lambda_omega"] = bool(gap <= rtol)
    return res


# ---------------------------------------------------------------------------
# isoperimetric report

def capacity_bounds(m: float, area_over_cap: float) -> tuple:
    """``(sup_rhs, inf_rhs)``: ``4(+-m x + sqrt(m^2 x^2 + 1/4))`` with ``x = Area/Cap``."""
    mx = m * area_over_cap
    root = math.sqrt(mx * mx + 0.25)
    return 4.0 * (mx + root), 4.0 * (-mx + root)


@dataclass
class ShapeReport:
    """Area, volume, capacity, critical coupling and both bound margins for one shape."""

    shape_id: str
    m: float
    area: float
    volume: float
    cap: float
    area_over_cap: float
    norm_K: float
    norm_W: float
    lambda_qep: float
    lambda_bisect: float
    rhs_sup: float
    rhs_inf: float
    margin_sup: float
    margin_inf: float
    capacity_product: float
    capacity_product_bound: float
    capacity_product_margin: float
    polya_szego_margin: float
    constraint_ok: bool
    weakened_constraint_ok: bool
    weakened_threshold: float
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, (bool, np.bool_)):
                out[k] = bool(v)
            elif isinstance(v, (float, int, np.floating, np.integer)):
                out[k] = float(v)
            else:
                out[k] = v
        return out


def isoperimetric_report(mesh: SurfaceMesh, m: float, shape_id: str = "", bisection: bool = True) -> ShapeReport:
    """Evaluate the capacity bound on the critical coupling for one mesh.

    ``margin_sup = lambda_omega - rhs_sup`` and ``margin_inf = rhs_inf - 4/lambda_omega``;
    both are nonnegative when the bound holds and vanish for balls.
    """
    asm = assembler_for(mesh)
    p = PhysicalParams(m, m)
    K = assemble_K(mesh, p, asm)
    W = assemble_W(mesh, p, asm)
    nK, nW = operator_norm(K), operator_norm(W)
    cap = capacity(mesh, asm)
    notes = []
    q = lambda_omega_qep(K, W, m, nK, nW)
    lam_b = float("nan")
    if bisection:
        b = lambda_omega_bisect(K, W, m, nK, nW)
        lam_b = b.lambda_omega
        notes += b.notes
    x = cap.area_over_cap
    sup_rhs, inf_rhs = capacity_bounds(m, x)
    lam = q.lambda_omega
    prod = lam * cap.cap
    prod_bound = 4.0 * (m * cap.area + math.sqrt((m * cap.area) ** 2 + 6 ** (2 / 3) * np.pi ** (4 / 3) * cap.volume ** (2 / 3)))
    wq = 1.0 / (4.0 * nW**2)
    weak_thr = (1.0 - wq) / (4.0 * math.sqrt(2.0 - wq)) if wq < 2 else float("nan")
    return ShapeReport(
        shape_id or mesh.digest(), float(m), cap.area, cap.volume, cap.cap, x, nK, nW, lam, lam_b,
        sup_rhs, inf_rhs, lam - sup_rhs, inf_rhs - 4.0 / lam, prod, prod_bound, prod - prod_bound,
        cap.polya_szego_margin, bool(m * x > 1.0 / (4.0 * math.sqrt(2.0))), bool(m * x > weak_thr),
        weak_thr, notes,
    )


# ---------------------------------------------------------------------------
# splitting experiment

@dataclass
class SplitRow:
    """One separation of the two-copy experiment."""

    t: float
    z: float
    norm_K_split: float
    t_norm_K: float
    deviation: float
    bound: float
    distance: float
    volume_ratio: float
    below_original: bool

    @property
    def within_bound(self) -> bool:
        return self.deviation <= self.bound

    def as_dict(self) -> dict:
        d = {k: float(v) if not isinstance(v, (bool, np.bool_)) else bool(v) for k, v in self.__dict__.items()}
        d["within_bound"] = bool(self.within_bound)
        return d


def _single_layer_norm(mesh: SurfaceMesh) -> float:
    S = assembler_for(mesh).blocks(0.0).scalar
    return operator_norm(DenseOperator([(S, np.eye(1))], mesh.areas, name="K"))


def split_experiment(mesh: SurfaceMesh, t: float, z_magnitudes, direction=(1.0, 0.0, 0.0)) -> list:
    """Single-layer norm of two scaled copies against the one-copy value.

    For each ``|z|`` the deviation ``| |K_{t,z}| - t |K| |`` is compared with
    ``Area(two copies) / (2 pi dist)``.  The distance is the minimum
    vertex-to-vertex distance between the copies, which can only exceed the
    true distance, so the bound used is never looser than the exact one.
    ``below_original`` records ``|K_{t,z}| < |K|``.
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    nK = _single_layer_norm(mesh)
    rows = []
    for zm in z_magnitudes:
        z = float(zm) * direction
        tm = two_copy(mesh, t, z)
        nk2 = _single_layer_norm(tm)
        nv = len(mesh.vertices)
        va, vb = tm.vertices[:nv], tm.vertices[nv:]
        dist = float(cKDTree(vb).query(va)[0].min())
        bound = tm.area / (2.0 * np.pi * dist)
        dev = abs(nk2 - t * nK)
        rows.append(SplitRow(float(t), float(zm), nk2, t * nK, dev, bound, dist, tm.volume / mesh.volume,
                             bool(nk2 < nK)))
    return rows
