"""Panel-constant Galerkin discretization of the boundary operators.

All operators act on spinor densities that are constant on each panel,
stored panel-major (entry ``d * i + c`` is component ``c`` on panel ``i``).
Every operator is written as a sum of Kronecker terms
``kron(R / area, E)`` with a real ``n x n`` panel matrix ``R`` and a fixed
``d x d`` spin matrix ``E``.  The Galerkin matrix ``R`` is symmetric (or
antisymmetric when ``E`` is anti-Hermitian), which makes the operator
Hermitian for the area-weighted inner product.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.spatial import cKDTree

from . import _backend
from .kernels import ALPHA, BETA, I2, I4, PAULI, ParameterError, PhysicalParams
from .mesh import SurfaceMesh
from .quadrature import (
    PanelPairClass,
    edge_graded_rule,
    map_rule,
    regular_rule,
    self_radial_integral,
    subdivided_rule,
    vertex_graded_rule,
)

__all__ = [
    "DenseOperator",
    "GalerkinBlocks",
    "Assembler",
    "assembler_for",
    "assemble_C",
    "assemble_K",
    "assemble_W",
    "assemble_dC_da",
    "multiplier",
    "evaluate_potential",
    "PointOnSurfaceError",
    "dump_operator",
    "load_operator_dump",
]

FOUR_PI = 4.0 * np.pi


class PointOnSurfaceError(ValueError):
    """Evaluation point too close to a panel for reliable quadrature."""


# ---------------------------------------------------------------------------
# operators

class DenseOperator:
    """Weighted-Hermitian operator on panel-constant spinor densities.

    Parameters
    ----------
    terms : sequence of (R, E)
        ``R`` is a real ``(n, n)`` Galerkin matrix or a length-``n`` vector
        standing for ``diag(R)``; ``E`` is a ``(d, d)`` complex matrix.
    areas : (n,) array
        Panel areas, the weight of the inner product.
    symmetry_residual : float
        Spectral-norm bound of the discarded non-Hermitian part (weighted frame).
    """

    def __init__(self, terms, areas, symmetry_residual: float = 0.0, name: str = ""):
        self.terms = tuple((np.asarray(R), np.asarray(E, dtype=complex)) for R, E in terms)
        if not self.terms:
            raise ValueError("operator needs at least one term")
        self.areas = np.asarray(areas, dtype=float)
        if np.any(self.areas <= 0):
            raise ValueError("weights must be strictly positive")
        self.d = self.terms[0][1].shape[0]
        self.n = len(self.areas)
        self.symmetry_residual = float(symmetry_residual)
        self.name = name
        self._frame_terms = None
        self._entries = None

    @property
    def shape(self):
        return (self.n * self.d, self.n * self.d)

    @property
    def weight(self) -> np.ndarray:
        return np.repeat(self.areas, self.d)

    def _frame(self):
        if self._frame_terms is None:
            s = 1.0 / np.sqrt(self.areas)
            out = []
            for R, E in self.terms:
                Rh = R * s * s if R.ndim == 1 else R * s[:, None] * s[None, :]
                out.append((Rh, E))
            self._frame_terms = tuple(out)
        return self._frame_terms

    def _apply(self, terms, X):
        X = np.asarray(X)
        vec = X.ndim == 1
        Xr = X.reshape(self.n, self.d, -1).astype(complex, copy=False)
        k = Xr.shape[2]
        Y = np.zeros_like(Xr)
        flat = np.ascontiguousarray(Xr).reshape(self.n, self.d * k)
        re = flat.view(np.float64)
        for R, E in terms:
            if R.ndim == 1:
                Z = R[:, None, None] * Xr
            else:
                Z = (R @ re).view(complex).reshape(self.n, self.d, k)
            Y += np.einsum("ab,nbk->nak", E, Z)
        Y = Y.reshape(self.n * self.d, k)
        return Y[:, 0] if vec else Y

    def matmat(self, X, frame: bool = False):
        """Apply the operator (or its Hermitian similarity form when ``frame``)."""
        if frame:
            return self._apply(self._frame(), X)
        sq = np.sqrt(self.weight)
        X = np.asarray(X)
        Xs = X * (sq if X.ndim == 1 else sq[:, None])
        Y = self._apply(self._frame(), Xs)
        return Y / (sq if Y.ndim == 1 else sq[:, None])

    def __call__(self, X):
        return self.matmat(X)

    @property
    def entries(self) -> np.ndarray:
        """Dense complex matrix in the plain coefficient basis."""
        if self._entries is None:
            self._entries = self._dense(self.terms, rows=1.0 / self.areas)
        return self._entries

    def hermitian_entries(self) -> np.ndarray:
        """Dense ``M^{1/2} A M^{-1/2}``, Hermitian in the Euclidean sense."""
        return self._dense(self._frame(), rows=None)

    def _dense(self, terms, rows):
        out = np.zeros(self.shape, dtype=complex)
        v = out.reshape(self.n, self.d, self.n, self.d)
        idx = np.arange(self.n)
        for R, E in terms:
            if R.ndim == 1:
                r = R if rows is None else R * rows
                v[idx, :, idx, :] += r[:, None, None] * E
            else:
                r = R if rows is None else R * rows[:, None]
                v += r[:, None, :, None] * E[None, :, None, :]
        return out

    def linear_operator(self, frame: bool = True) -> LinearOperator:
        return LinearOperator(
            self.shape,
            matvec=lambda x: self.matmat(x, frame),
            matmat=lambda x: self.matmat(x, frame),
            rmatvec=lambda x: self.matmat(x, frame) if frame else self.adjoint_matmat(x),
            dtype=complex,
        )

    def adjoint_matmat(self, X):
        """Euclidean adjoint in the plain basis, ``M A M^{-1}``."""
        w = self.weight
        X = np.asarray(X)
        Y = self.matmat(X / (w if X.ndim == 1 else w[:, None]))
        return Y * (w if Y.ndim == 1 else w[:, None])

    def inner(self, f, g) -> complex:
        """Weighted inner product ``sum_i area_i f_i . conj(g_i)``."""
        return complex(np.sum(self.weight * np.asarray(f) * np.conj(g)))

    def norm(self, f) -> float:
        return float(np.sqrt(np.sum(self.weight * np.abs(f) ** 2)))

    def scaled(self, c: float) -> "DenseOperator":
        return DenseOperator([(R, c * E) for R, E in self.terms], self.areas, abs(c) * self.symmetry_residual,
                             self.name)

    def __add__(self, other: "DenseOperator") -> "DenseOperator":
        if not isinstance(other, DenseOperator) or other.d != self.d or other.n != self.n:
            return NotImplemented
        return DenseOperator(
            self.terms + other.terms,
            self.areas,
            self.symmetry_residual + other.symmetry_residual,
            self.name,
        )

    def __repr__(self):
        return f"DenseOperator(name={self.name!r}, n={self.n}, d={self.d}, terms={len(self.terms)})"


@dataclass
class GalerkinBlocks:
    """Symmetrized scalar and vector Galerkin matrices at one decay rate.

    ``scalar`` holds ``int int s(|x - y|)`` and ``vector[k]`` holds
    ``int int v(|x - y|) (x - y)_k`` over panel pairs.
    """

    scalar: np.ndarray
    vector: np.ndarray
    skew_scalar: float
    skew_vector: np.ndarray
    kappa: float
    a: float
    mode: str

    def skew(self, coeffs) -> float:
        """Bound on the spectral norm of the discarded part of ``sum_k coeff_k`` terms.

        ``coeffs`` is ``(c0, cv)`` with spin-matrix norms for the scalar and
        the three vector terms; the bound follows from the triangle inequality.
        """
        c0, cv = coeffs
        return float(abs(c0) * self.skew_scalar + np.sum(np.abs(cv) * self.skew_vector))


def _sparse_norm(A) -> float:
    """Spectral norm of a sparse real symmetric or antisymmetric matrix."""
    if A.nnz == 0 or not np.any(A.data):
        return 0.0
    G = (A.T @ A).tocsr()
    if G.shape[0] <= 400:
        return float(np.sqrt(max(np.linalg.eigvalsh(G.toarray())[-1], 0.0)))
    v0 = np.random.default_rng(0).standard_normal(G.shape[0])
    val = eigsh(G, k=1, which="LA", v0=v0, tol=1e-6, return_eigenvectors=False)[0]
    return float(np.sqrt(max(val, 0.0)))


def _symmetrize(S, V, areas, rows, cols):
    """Average with the transpose and measure the skew part on near pairs.

    Far pairs are filled symmetrically by construction, so the discarded
    part is supported on the near pattern ``(rows, cols)``.
    """
    n = len(areas)
    s = 1.0 / np.sqrt(areas)
    w = s[rows] * s[cols]

    def norm_of(vals):
        return _sparse_norm(csr_matrix((vals * w, (rows, cols)), shape=(n, n)))

    skew_s = norm_of(0.5 * (S[rows, cols] - S[cols, rows]))
    skew_v = np.array([norm_of(0.5 * (V[k][rows, cols] + V[k][cols, rows])) for k in range(3)])
    Ssym = 0.5 * (S + S.T)
    Vsym = 0.5 * (V - V.transpose(0, 2, 1))
    return Ssym, Vsym, skew_s, skew_v


# ---------------------------------------------------------------------------
# assembler

@dataclass
class _NearGroup:
    I: np.ndarray
    J: np.ndarray


class Assembler:
    """Geometry-dependent quadrature data for one mesh, shared across decay rates.

    Parameters
    ----------
    mesh : SurfaceMesh
    eta : float
        Pairs with centroid distance below ``eta`` times the larger panel
        diameter (or sharing a vertex) are treated as near.
    far_degree, near_degree : int
        Regular rule degrees for far pairs and for the near-field remainders.
    backend : {"python", "cython"}, optional
        Defaults to the compiled core when available.
    """

    def __init__(self, mesh: SurfaceMesh, eta: float = 2.0, far_degree: int = 5, near_degree: int = 7,
                 backend: str | None = None, cache_size: int = 6):
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.mesh = mesh
        self.eta = float(eta)
        self.far_rule = regular_rule(far_degree)
        self.near_rule = regular_rule(near_degree)
        self.core = _backend.get_core(backend)
        self.threads = _backend.thread_count()
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._static = None
        self._classify()
        corners = mesh.corners()
        self.far_nodes, self.far_weights = map_rule(corners, self.far_rule)
        self.near_nodes, self.near_weights = map_rule(corners, self.near_rule)

    # -- classification ---------------------------------------------------
    def _classify(self):
        mesh = self.mesh
        n = mesh.n_panels
        tri = mesh.triangles
        inc = csr_matrix((np.ones(3 * n), (np.repeat(np.arange(n), 3), tri.ravel())),
                         shape=(n, len(mesh.vertices)))
        shared = (inc @ inc.T).tocoo()
        off = shared.row < shared.col
        touch_i, touch_j, touch_c = shared.row[off], shared.col[off], shared.data[off].astype(int)
        diam = mesh.diameters
        tree = cKDTree(mesh.centroids)
        pairs = tree.query_pairs(self.eta * diam.max(), output_type="ndarray")
        if len(pairs):
            pi, pj = pairs[:, 0], pairs[:, 1]
            dist = np.linalg.norm(mesh.centroids[pi] - mesh.centroids[pj], axis=1)
            close = dist < self.eta * np.maximum(diam[pi], diam[pj])
            pi, pj = pi[close], pj[close]
        else:
            pi = pj = np.zeros(0, dtype=np.int64)
        cls = {}
        for i, j in zip(pi.tolist(), pj.tolist()):
            a, b = (i, j) if i < j else (j, i)
            cls[(a, b)] = PanelPairClass.NEAR
        for i, j, c in zip(touch_i.tolist(), touch_j.tolist(), touch_c.tolist()):
            cls[(i, j)] = PanelPairClass.EDGE if c == 2 else PanelPairClass.VERTEX
        keys = sorted(cls)
        self.pair_i = np.array([k[0] for k in keys], dtype=np.int64)
        self.pair_j = np.array([k[1] for k in keys], dtype=np.int64)
        self.pair_class = np.array([int(cls[k]) for k in keys], dtype=np.int64)
        mask = np.zeros((n, n), dtype=np.uint8)
        mask[self.pair_i, self.pair_j] = 1
        mask[self.pair_j, self.pair_i] = 1
        mask[np.arange(n), np.arange(n)] = 1
        self.near_mask = mask
        # ordered pairs for the near field
        self.ord_i = np.concatenate([self.pair_i, self.pair_j])
        self.ord_j = np.concatenate([self.pair_j, self.pair_i])
        self.ord_class = np.concatenate([self.pair_class, self.pair_class])

    def pair_class_of(self, i: int, j: int) -> PanelPairClass:
        if i == j:
            return PanelPairClass.IDENTICAL
        a, b = (i, j) if i < j else (j, i)
        k = np.searchsorted(self.pair_i, a, side="left")
        hi = np.searchsorted(self.pair_i, a, side="right")
        hit = np.nonzero(self.pair_j[k:hi] == b)[0]
        return PanelPairClass(int(self.pair_class[k + hit[0]])) if len(hit) else PanelPairClass.FAR

    # -- near-field static part ------------------------------------------
    def _near_groups(self):
        """Split ordered near pairs by the outer rule they need."""
        tri = self.mesh.triangles
        I, J, C = self.ord_i, self.ord_j, self.ord_class
        member = (tri[I][:, :, None] == tri[J][:, None, :]).any(axis=2)
        groups = []
        for k in range(3):
            sel = (C == PanelPairClass.EDGE) & ~member[:, k]
            groups.append((edge_graded_rule(k, n=6, levels=6), I[sel], J[sel]))
            sel = (C == PanelPairClass.VERTEX) & member[:, k]
            groups.append((vertex_graded_rule(k, n=6, levels=6), I[sel], J[sel]))
        sel = C == PanelPairClass.NEAR
        In, Jn = I[sel], J[sel]
        if len(In):
            v = self.mesh.vertices
            gap = np.min(
                np.linalg.norm(v[tri[In]][:, :, None, :] - v[tri[Jn]][:, None, :, :], axis=-1), axis=(1, 2)
            )
            level = np.clip(np.ceil(np.log2(1.5 * self.mesh.diameters[In] / gap)), 0, 3).astype(int)
            for L in range(4):
                s = level == L
                groups.append((subdivided_rule(self.near_rule.degree, L), In[s], Jn[s]))
        return groups

    def static_near(self):
        """Ordered-pair static integrals ``int int 1/(4 pi r)`` and the field analogue."""
        if self._static is not None:
            return self._static
        corners = self.mesh.corners()
        m = len(self.ord_i)
        S0 = np.zeros(m)
        V0 = np.zeros((m, 3))
        order = np.lexsort((self.ord_j, self.ord_i))
        key = self.ord_i[order] * self.mesh.n_panels + self.ord_j[order]
        for rule, I, J in self._near_groups():
            if len(I) == 0:
                continue
            at = order[np.searchsorted(key, I * self.mesh.n_panels + J)]
            q = len(rule)
            step = max(1, 200_000 // q)
            for lo in range(0, len(I), step):
                ii, jj = I[lo : lo + step], J[lo : lo + step]
                nodes, w = map_rule(corners[ii], rule)
                x = nodes.reshape(-1, 3)
                tj = np.repeat(corners[jj], q, axis=0)
                pot, fld = self.core.triangle_static(x, tj)
                S0[at[lo : lo + step]] = (w * pot.reshape(-1, q)).sum(axis=1) / FOUR_PI
                V0[at[lo : lo + step]] = np.einsum("pq,pqk->pk", w, fld.reshape(-1, q, 3)) / FOUR_PI
        self._static = (S0, V0)
        return self._static

    # -- blocks -------------------------------------------------------------
    def blocks(self, kappa: float, a: float = 0.0, mode: str = "full") -> GalerkinBlocks:
        """Symmetrized Galerkin matrices for the kernel family ``mode``.

        ``mode="full"`` gives the Yukawa single layer and the Pauli field
        kernel at decay rate ``kappa``; ``mode="deriv"`` gives the bounded
        parts of the spectral-parameter derivative (they depend on ``a``).
        """
        kappa = float(kappa)
        a = float(a) if mode == "deriv" else 0.0
        key = (kappa, a, mode)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        n = self.mesh.n_panels
        S, V = self.core.far_field(self.far_nodes, self.far_weights, self.near_mask, kappa, a, mode, self.threads)
        I, J = self.ord_i, self.ord_j
        xo, wo = self.near_nodes[I], self.near_weights[I]
        yi, wi = self.near_nodes[J], self.near_weights[J]
        corners = self.mesh.corners()
        if mode == "full":
            S0, V0 = self.static_near()
            sr, vr = self.core.pair_integrals(xo, wo, yi, wi, kappa, a, "rem")
            S[I, J] = S0 + sr
            V[:, I, J] = (V0 + vr).T
            diag = self_radial_integral(corners, lambda r: np.exp(-kappa * r) / FOUR_PI)
        elif mode == "deriv":
            if kappa <= 0:
                raise ParameterError("derivative blocks need |a| < m")
            sr, vr = self.core.pair_integrals(xo, wo, yi, wi, kappa, a, "deriv")
            S[I, J] = sr
            V[:, I, J] = vr.T
            diag = self_radial_integral(corners, lambda r: a * np.exp(-kappa * r) * r / (FOUR_PI * kappa))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        S[np.arange(n), np.arange(n)] = diag
        V[:, np.arange(n), np.arange(n)] = 0.0
        Ss, Vs, ks, kv = _symmetrize(S, V, self.mesh.areas, self.ord_i, self.ord_j)
        blk = GalerkinBlocks(Ss, Vs, ks, kv, kappa, a, mode)
        self._cache[key] = blk
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return blk


_ASSEMBLERS: "OrderedDict[tuple, Assembler]" = OrderedDict()


def assembler_for(mesh: SurfaceMesh, eta: float = 2.0, backend: str | None = None) -> Assembler:
    """Process-wide cache of assemblers keyed by mesh content."""
    key = (mesh.digest(), float(eta), backend or _backend.BACKEND)
    if key in _ASSEMBLERS:
        _ASSEMBLERS.move_to_end(key)
        return _ASSEMBLERS[key]
    asm = Assembler(mesh, eta=eta, backend=backend)
    _ASSEMBLERS[key] = asm
    while len(_ASSEMBLERS) > 4:
        _ASSEMBLERS.popitem(last=False)
    return asm


# ---------------------------------------------------------------------------
# public assembly entry points

def _asm(mesh, assembler):
    return assembler if assembler is not None else assembler_for(mesh)


def assemble_K(mesh: SurfaceMesh, p: PhysicalParams, assembler: Assembler | None = None) -> DenseOperator:
    """Single-layer operator with kernel ``exp(-kappa r)/(4 pi r)`` on 2-spinors."""
    blk = _asm(mesh, assembler).blocks(p.kappa)
    return DenseOperator([(blk.scalar, I2)], mesh.areas, blk.skew((1.0, np.zeros(3))), "K")


def assemble_W(mesh: SurfaceMesh, p: PhysicalParams, assembler: Assembler | None = None) -> DenseOperator:
    """Principal-value Pauli operator on 2-spinors."""
    blk = _asm(mesh, assembler).blocks(p.kappa)
    terms = [(blk.vector[k], 1j * PAULI[k]) for k in range(3)]
    return DenseOperator(terms, mesh.areas, blk.skew((0.0, np.ones(3))), "W")


def assemble_C(mesh: SurfaceMesh, p: PhysicalParams, assembler: Assembler | None = None) -> DenseOperator:
    """The 4x4 principal-value convolution with the Dirac fundamental solution."""
    blk = _asm(mesh, assembler).blocks(p.kappa)
    diag = p.a * I4 + p.m * BETA
    terms = [(blk.scalar, diag)] + [(blk.vector[k], 1j * ALPHA[k]) for k in range(3)]
    coef = (max(abs(p.a + p.m), abs(p.a - p.m)), np.ones(3))
    return DenseOperator(terms, mesh.areas, blk.skew(coef), "C")


def assemble_dC_da(mesh: SurfaceMesh, p: PhysicalParams, assembler: Assembler | None = None) -> DenseOperator:
    """Derivative of :func:`assemble_C` with respect to the spectral parameter."""
    if not p.interior:
        raise ParameterError("derivative operator needs |a| < m")
    asm = _asm(mesh, assembler)
    full = asm.blocks(p.kappa)
    der = asm.blocks(p.kappa, p.a, "deriv")
    diag = p.a * I4 + p.m * BETA
    terms = [(der.scalar, diag), (full.scalar, I4)] + [(der.vector[k], 1j * ALPHA[k]) for k in range(3)]
    skew = der.skew((max(abs(p.a + p.m), abs(p.a - p.m)), np.ones(3))) + full.skew((1.0, np.zeros(3)))
    return DenseOperator(terms, mesh.areas, skew, "dC/da")


def multiplier(mesh: SurfaceMesh, which: str = "alpha") -> DenseOperator:
    """Panelwise multiplication by ``alpha . N`` (``"alpha"``) or ``sigma . N`` (``"sigma"``)."""
    mats = {"alpha": ALPHA, "alpha.N": ALPHA, "sigma": PAULI, "sigma.N": PAULI}
    if which not in mats:
        raise ValueError(f"which must be 'alpha' or 'sigma', got {which!r}")
    E = mats[which]
    terms = [(mesh.areas * mesh.normals[:, k], E[k]) for k in range(3)]
    return DenseOperator(terms, mesh.areas, 0.0, f"{which}.N")


# ---------------------------------------------------------------------------
# off-surface evaluation

def _point_triangle_distance(x, tri):
    """Euclidean distance from points ``x`` (m, 3) to triangles ``tri`` (m, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    nrm = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", nrm, nrm)
    d = np.einsum("ij,ij->i", x - a, nrm)
    proj = x - (d / nn)[:, None] * nrm
    inside = np.ones(len(x), dtype=bool)
    for p, q in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("ij,ij->i", np.cross(q - p, proj - p), nrm) >= 0
    best = np.where(inside, np.abs(d) / np.sqrt(nn), np.inf)
    for p, q in ((a, b), (b, c), (c, a)):
        e = q - p
        t = np.clip(np.einsum("ij,ij->i", x - p, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(x - (p + t[:, None] * e), axis=1))
    return best


def evaluate_potential(mesh: SurfaceMesh, g, points, p: PhysicalParams, eta: float = 2.0,
                       min_distance: float = 0.1, chunk: int | None = None) -> np.ndarray:
    """Layer potential ``int phi^a(x - y) g(y) dsigma(y)`` at off-surface points.

    Parameters
    ----------
    g : (4 n,) complex array
        Panel-constant density, panel-major.
    points : (m, 3) array
    min_distance : float
        Points closer than this multiple of the nearest panel's diameter are
        refused.

    Returns
    -------
    (m, 4) complex array
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = mesh.n_panels
    G = np.asarray(g, dtype=complex).reshape(n, 4)
    if not np.any(G):
        return np.zeros((len(pts), 4), dtype=complex)
    core = _backend.core
    kappa = p.kappa
    diam = mesh.diameters
    corners = mesh.corners()
    far_nodes, far_w = map_rule(corners, regular_rule(7))
    near_nodes, near_w = far_nodes, far_w
    scal_spin = (p.a * I4 + p.m * BETA)
    out = np.zeros((len(pts), 4), dtype=complex)
    if chunk is None:
        chunk = max(8, int(1_500_000 // (n * len(regular_rule(7)))))
    for lo in range(0, len(pts), chunk):
        x = pts[lo : lo + chunk]
        m = len(x)
        dist_c = np.linalg.norm(x[:, None, :] - mesh.centroids[None, :, :], axis=2)
        near = dist_c < eta * diam[None, :]
        # far panels: full kernel by regular quadrature
        dx = x[:, None, None, :] - far_nodes[None, :, :, :]
        r = np.sqrt(np.einsum("...k,...k->...", dx, dx))
        e = np.exp(-kappa * r)
        sf = np.where(near[:, :, None], 0.0, e / (FOUR_PI * r) * far_w[None])
        vf = np.where(near[:, :, None], 0.0, e * (1 + kappa * r) / (FOUR_PI * r**3) * far_w[None])
        Smat = sf.sum(axis=2)
        Vmat = np.einsum("mjq,mjqk->kmj", vf, dx)
        pi, pj = np.nonzero(near)
        if len(pi):
            dist = _point_triangle_distance(x[pi], corners[pj])
            bad = dist < min_distance * diam[pj]
            if np.any(bad):
                k = int(np.argmax(bad))
                raise PointOnSurfaceError(
                    f"point {lo + int(pi[k])} lies {dist[k]:.3g} from panel {int(pj[k])} "
                    f"(limit {min_distance} x panel size {diam[pj[k]]:.3g})"
                )
            pot, fld = core.triangle_static(x[pi], corners[pj])
            sr, vr = core.pair_integrals(
                x[pi][:, None, :], np.ones((len(pi), 1)), near_nodes[pj], near_w[pj], kappa, 0.0, "rem"
            )
            Smat[pi, pj] = pot / FOUR_PI + sr
            Vmat[:, pi, pj] = (fld / FOUR_PI + vr).T
        SG = Smat @ G
        out[lo : lo + m] = SG @ scal_spin.T
        for k in range(3):
            out[lo : lo + m] += 1j * (Vmat[k] @ G) @ ALPHA[k].T
    return out


# ---------------------------------------------------------------------------
# binary dumps

_MAGIC = b"SHSPOP01"


def dump_operator(op: DenseOperator, path, a: float, m: float, mesh_hash: str) -> None:
    """Write ``entries`` row-major as complex128 after a fixed header.

    Header: magic, ``n`` and ``d`` (int64), ``a`` and ``m`` (float64), and the
    16-character mesh hash.
    """
    h = mesh_hash.encode("ascii")[:16].ljust(16, b"\0")
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC + struct.pack("<qqdd", op.n, op.d, float(a), float(m)) + h)
        fh.write(np.ascontiguousarray(op.entries, dtype="<c16").tobytes())


def load_operator_dump(path):
    """Inverse of :func:`dump_operator`: returns (header dict, entries)."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not an operator dump")
    n, d, a, m = struct.unpack("<qqdd", raw[8:40])
    mesh_hash = raw[40:56].rstrip(b"\0").decode("ascii")
    data = np.frombuffer(raw[56:], dtype="<c16").reshape(n * d, n * d)
    return {"n": n, "d": d, "a": a, "m": m, "mesh_hash": mesh_hash}, data
