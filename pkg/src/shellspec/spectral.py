"""Eigensolvers for weighted-Hermitian operators and the critical coupling.

Operators are Hermitian for the area-weighted inner product, so every solve
runs in the similarity frame ``M^{1/2} A M^{-1/2}`` where they are Hermitian
in the Euclidean sense, and eigenvectors are mapped back to the plain basis.
Small problems go through LAPACK; larger ones through ARPACK on matrix-free
operators built from the Kronecker-term representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs, eigsh

from .assembly import DenseOperator

__all__ = [
    "SpectralError",
    "BracketError",
    "SpectralReport",
    "LambdaOmegaResult",
    "weighted_hermitian_eig",
    "operator_norm",
    "extreme_eigenvalues",
    "lambda_omega_bracket",
    "lambda_omega_qep",
    "lambda_omega_bisect",
    "quadratic_form",
    "clustered_eigenpairs",
    "all_eigenvalues",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 800
_TWO_SQRT2 = 2.0 * np.sqrt(2.0)


class SpectralError(ArithmeticError):
    """Numerical failure of an eigensolve or of a consistency check."""


class BracketError(SpectralError):
    """The computed critical coupling contradicts the a priori bracket."""


@dataclass
class SpectralReport:
    """Eigenpairs of a weighted-Hermitian operator, eigenvalues descending.

    ``eigenvectors[:, j]`` is normalized in the weighted inner product and
    ``residuals[j]`` is the weighted norm of ``A v_j - c_j v_j``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    a: float | None = None
    m: float | None = None
    mesh_id: str = ""
    operator: str = ""

    def __len__(self):
        return len(self.eigenvalues)

    def as_dict(self, vectors: bool = False) -> dict:
        out = {
            "operator": self.operator,
            "mesh_id": self.mesh_id,
            "a": self.a,
            "m": self.m,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
        }
        if vectors:
            out["eigenvectors_real"] = self.eigenvectors.real.tolist()
            out["eigenvectors_imag"] = self.eigenvectors.imag.tolist()
        return out


@dataclass
class LambdaOmegaResult:
    """Critical coupling with its certificate.

    Attributes
    ----------
    lambda_omega : float
    method : {"qep", "bisection"}
    density : ndarray
        Achieving 2-spinor density ``f`` (weighted unit norm).
    residual : float
        Relative weighted residual of ``(lam^2 - 8 m lam K - 16 W^2) f``.
    form_gap : float
        Relative gap ``|A(lam, f) - |f|^2| / |f|^2`` of the quadratic form
        ``A(lam, f) = (16/lam^2) |W f|^2 + (8 m / lam) <K f, f>``.
    bracket : tuple of float
        Lower and upper a priori bounds from ``|K|`` and ``|W|``.
    norm_K, norm_W : float
    threshold, weakened_threshold : float
        ``2 sqrt 2`` and ``2 sqrt(2 - 1/(4 |W|^2))``.
    above_threshold : bool
        Whether ``lambda_omega`` exceeds ``threshold``.
    """

    lambda_omega: float
    method: str
    density: np.ndarray
    residual: float
    form_gap: float
    bracket: tuple
    norm_K: float
    norm_W: float
    threshold: float = _TWO_SQRT2
    weakened_threshold: float = float("nan")
    above_threshold: bool = True
    iterations: int = 0
    notes: list = field(default_factory=list)

    @property
    def in_bracket(self) -> bool:
        lo, hi = self.bracket
        tol = 1e-9 * max(1.0, abs(hi))
        return lo - tol <= self.lambda_omega <= hi + tol

    def as_dict(self) -> dict:
        return {
            "lambda_omega": float(self.lambda_omega),
            "method": self.method,
            "residual": float(self.residual),
            "form_gap": float(self.form_gap),
            "bracket_lower": float(self.bracket[0]),
            "bracket_upper": float(self.bracket[1]),
            "in_bracket": bool(self.in_bracket),
            "norm_K": float(self.norm_K),
            "norm_W": float(self.norm_W),
            "threshold": float(self.threshold),
            "weakened_threshold": float(self.weakened_threshold),
            "above_threshold": bool(self.above_threshold),
            "iterations": int(self.iterations),
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# helpers

def _check_finite(op: DenseOperator):
    for R, E in op.terms:
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(E))):
            raise SpectralError(f"operator {op.name or '?'} has non-finite entries")


def _fix_phase(U: np.ndarray) -> np.ndarray:
    """Rotate each column so its first significant entry is positive real."""
    U = np.array(U, dtype=complex, copy=True)
    if U.size == 0:
        return U
    mag = np.abs(U)
    thresh = 1e-6 * mag.max(axis=0)
    first = np.argmax(mag > thresh[None, :], axis=0)
    lead = U[first, np.arange(U.shape[1])]
    ph = np.where(np.abs(lead) > 0, lead / np.where(np.abs(lead) > 0, np.abs(lead), 1.0), 1.0)
    return U / ph[None, :]


def _v0(size: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def _frame_eigsh(op: DenseOperator, k: int, which: str, tol: float = 1e-12, v0=None):
    N = op.shape[0]
    L = op.linear_operator(frame=True)
    ncv = min(N, max(2 * k + 1, 40))
    try:
        w, U = eigsh(L, k=k, which=which, tol=tol, ncv=ncv, v0=_v0(N) if v0 is None else v0, maxiter=20 * N)
    except ArpackNoConvergence as exc:
        raise SpectralError(f"ARPACK did not converge for {op.name or 'operator'}: {exc}") from exc
    return w, U


def weighted_hermitian_eig(op: DenseOperator, k: int | None = None, which: str = "LM",
                           a: float | None = None, m: float | None = None, mesh_id: str = "",
                           dense_limit: int = DENSE_LIMIT) -> SpectralReport:
    """Eigen-decomposition of a weighted-Hermitian operator.

    Parameters
    ----------
    op : DenseOperator
    k : int, optional
        Number of eigenpairs. ``None`` requests the full spectrum.
    which : {"LM", "LA", "SA"}
        Selection rule when ``k`` is given: largest magnitude, largest or
        smallest algebraic.
    dense_limit : int
        Matrices up to this size are solved with LAPACK.

    Returns
    -------
    SpectralReport
        Eigenvalues in descending order; each eigenvector has weighted norm 1
        and a positive-real first significant component.

    Raises
    ------
    SpectralError
        Non-finite input or solver failure.
    """
    _check_finite(op)
    N = op.shape[0]
    if which not in ("LM", "LA", "SA"):
        raise ValueError(f"which must be LM, LA or SA, got {which!r}")
    if k is not None and not 1 <= k <= N:
        raise ValueError(f"k must lie in 1..{N}")
    if k is None or N <= dense_limit or k >= N - 1:
        H = op.hermitian_entries()
        H = 0.5 * (H + H.conj().T)
        w, U = np.linalg.eigh(H)
        if k is not None and k < N:
            if which == "LM":
                sel = np.argsort(-np.abs(w), kind="stable")[:k]
            elif which == "LA":
                sel = np.arange(N - k, N)
            else:
                sel = np.arange(k)
            w, U = w[sel], U[:, sel]
    else:
        w, U = _frame_eigsh(op, k, which)
    order = np.argsort(-w, kind="stable")
    w, U = w[order], _fix_phase(U[:, order])
    HU = op.matmat(U, frame=True)
    res = np.linalg.norm(HU - U * w[None, :], axis=0)
    V = U / np.sqrt(op.weight)[:, None]
    return SpectralReport(w, V, res, a, m, mesh_id, op.name)


def extreme_eigenvalues(op: DenseOperator, k: int = 1, which: str = "LA",
                        dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Eigenvalues only (descending) without residual bookkeeping."""
    _check_finite(op)
    N = op.shape[0]
    if N <= dense_limit or k >= N - 1:
        H = op.hermitian_entries()
        w = np.linalg.eigvalsh(0.5 * (H + H.conj().T))
        if which == "LM":
            w = w[np.argsort(-np.abs(w), kind="stable")[:k]]
        elif which == "LA":
            w = w[N - k:]
        else:
            w = w[:k]
    else:
        w = _frame_eigsh(op, k, which)[0]
    return np.sort(w)[::-1]


def all_eigenvalues(op: DenseOperator) -> np.ndarray:
    """Every eigenvalue (descending) from one dense Hermitian solve."""
    _check_finite(op)
    H = op.hermitian_entries()
    H += H.conj().T
    H *= 0.5
    w = linalg.eigvalsh(H, driver="evr", overwrite_a=True, check_finite=False)
    return w[::-1].copy()


def _groups(vals: np.ndarray, tol: float):
    """Index groups of numerically equal eigenvalues."""
    srt = np.argsort(-vals, kind="stable")
    out, cur = [], [srt[0]]
    for i in srt[1:]:
        if abs(vals[i] - vals[cur[-1]]) <= tol * max(1.0, abs(vals[i])):
            cur.append(i)
        else:
            out.append(cur)
            cur = [i]
    out.append(cur)
    return out


def clustered_eigenpairs(op: DenseOperator, k: int, which: str = "LM", cluster_tol: float = 1e-7,
                         dense_limit: int = DENSE_LIMIT) -> SpectralReport:
    """At least ``k`` extremal eigenpairs made of complete degenerate clusters.

    Krylov solvers may return only part of a degenerate eigenvalue cluster
    at the selection cutoff, so extra pairs are computed and the cluster
    touching the cutoff is dropped; the request grows until ``k`` pairs in
    complete clusters remain.

    Parameters
    ----------
    which : {"LM", "SM", "LA", "SA"}
        Largest or smallest magnitude, or algebraically largest or
        smallest.  Smallest magnitude works on ``s - A^2`` and splits signs
        by a Rayleigh-Ritz step with ``A``.

    Returns
    -------
    SpectralReport
        Ordered from the selected end of the spectrum inward: by
        decreasing magnitude for ``"LM"``, increasing magnitude for
        ``"SM"``, decreasing value for ``"LA"``, increasing value for ``"SA"``.
    """
    if which not in ("LM", "SM", "LA", "SA"):
        raise ValueError("which must be one of LM, SM, LA, SA")
    _check_finite(op)
    N = op.shape[0]
    kk = min(N, k + 8)
    while True:
        full = kk >= N - 1 or N <= dense_limit
        if full:
            rep = weighted_hermitian_eig(op, k=None, dense_limit=dense_limit)
            w, U = rep.eigenvalues, np.sqrt(op.weight)[:, None] * rep.eigenvectors
        elif which != "SM":
            w, U = _frame_eigsh(op, kk, which)
        else:
            shift = operator_norm(op, dense_limit) ** 2
            L = op.linear_operator(frame=True)
            sq = LinearOperator(L.shape, matvec=lambda x: shift * x - L.matvec(L.matvec(x)),
                                matmat=lambda X: shift * X - L.matmat(L.matmat(X)), dtype=complex)
            try:
                _, V = eigsh(sq, k=kk, which="LA", tol=1e-13, ncv=min(N, max(2 * kk + 1, 40)), v0=_v0(N),
                             maxiter=20 * N)
            except ArpackNoConvergence as exc:
                raise SpectralError(f"ARPACK did not converge for {op.name or 'operator'}: {exc}") from exc
            V, _ = np.linalg.qr(V)
            Hs = V.conj().T @ op.matmat(V, frame=True)
            w, Y = np.linalg.eigh(0.5 * (Hs + Hs.conj().T))
            U = V @ Y
        key = {"LM": -np.abs(w), "SM": np.abs(w), "LA": -w, "SA": w}[which]
        order = np.argsort(key, kind="stable")
        w, U = w[order], U[:, order]
        # the ordering key, signed so that it grows away from the selected end
        rank = np.abs(w) if which in ("LM", "SM") else w
        tol = cluster_tol * max(1.0, float(np.max(np.abs(w))))
        if full:
            keep = np.arange(min(k, N))
            # extend to the end of the cluster at the cutoff
            while len(keep) < N and abs(rank[len(keep)] - rank[keep[-1]]) <= tol:
                keep = np.arange(len(keep) + 1)
            break
        bad = np.abs(rank - rank[-1]) <= tol
        keep = np.nonzero(~bad)[0]
        if len(keep) >= k:
            break
        kk = min(N, 2 * kk)
    w, U = w[keep], _fix_phase(U[:, keep])
    res = np.linalg.norm(op.matmat(U, frame=True) - U * w[None, :], axis=0)
    return SpectralReport(w, U / np.sqrt(op.weight)[:, None], res, operator=op.name)


def operator_norm(op: DenseOperator, dense_limit: int = DENSE_LIMIT) -> float:
    """Weighted operator norm of a Hermitian operator: ``max |eigenvalue|``."""
    _check_finite(op)
    if all(not np.any(R) or not np.any(E) for R, E in op.terms):
        return 0.0
    k = 1 if op.shape[0] <= dense_limit else min(6, op.shape[0] - 2)
    w = extreme_eigenvalues(op, k=k, which="LM", dense_limit=dense_limit)
    return float(np.max(np.abs(w)))


# ---------------------------------------------------------------------------
# critical coupling

def lambda_omega_bracket(norm_K: float, norm_W: float, m: float) -> tuple:
    """A priori bounds ``4(m|K| + sqrt(m^2|K|^2 + 1/4))`` and the ``|W|^2`` analogue."""
    mk = m * norm_K
    return 4.0 * (mk + np.sqrt(mk * mk + 0.25)), 4.0 * (mk + np.sqrt(mk * mk + norm_W**2))


def _weakened(norm_W: float) -> float:
    inner = 2.0 - 1.0 / (4.0 * norm_W**2)
    return float(2.0 * np.sqrt(inner)) if inner > 0 else float("nan")


def quadratic_form(K: DenseOperator, W: DenseOperator, m: float, lam: float, f) -> float:
    """``(16/lam^2) |W f|^2 + (8 m / lam) <K f, f>`` in the weighted inner product."""
    f = np.asarray(f, dtype=complex)
    Wf = W.matmat(f)
    return float(16.0 / lam**2 * W.norm(Wf) ** 2 + 8.0 * m / lam * K.inner(K.matmat(f), f).real)


def _certificate(K, W, m, lam, f):
    """Weighted residual of the quadratic eigenproblem and the form gap, both relative."""
    Kf = K.matmat(f)
    W2f = W.matmat(W.matmat(f))
    r = lam**2 * f - 8.0 * m * lam * Kf - 16.0 * W2f
    nf = K.norm(f)
    res = K.norm(r) / (lam**2 * nf)
    gap = abs(quadratic_form(K, W, m, lam, f) - nf**2) / nf**2
    return float(res), float(gap)


def _check_inputs(K: DenseOperator, W: DenseOperator, m: float):
    if m <= 0:
        raise ValueError("mass m must be positive")
    if K.shape != W.shape or K.d != 2 or W.d != 2:
        raise ValueError("K and W must be 2-spinor operators on the same mesh")
    if not np.allclose(K.areas, W.areas, rtol=1e-13, atol=0):
        raise ValueError("K and W come from different meshes")
    _check_finite(K)
    _check_finite(W)


def _norms(K, W, norm_K, norm_W):
    nK = operator_norm(K) if norm_K is None else float(norm_K)
    nW = operator_norm(W) if norm_W is None else float(norm_W)
    return nK, nW


def lambda_omega_qep(K: DenseOperator, W: DenseOperator, m: float, norm_K: float | None = None,
                     norm_W: float | None = None, bracket_tol: float = 1e-6,
                     dense_limit: int = DENSE_LIMIT) -> LambdaOmegaResult:
    """Critical coupling from the quadratic eigenproblem ``lam^2 f = 16 W^2 f + 8 m lam K f``.

    The companion pencil ``[[0, I], [16 W^2, 8 m K]]`` acting on
    ``(f, lam f)`` is solved in the Hermitian frame; the largest real
    eigenvalue is returned together with its eigenvector.

    Raises
    ------
    SpectralError
        No real eigenvalue above 2.
    BracketError
        The eigenvalue leaves the a priori bracket by more than
        ``bracket_tol`` (relative).
    """
    _check_inputs(K, W, m)
    nK, nW = _norms(K, W, norm_K, norm_W)
    lo, hi = lambda_omega_bracket(nK, nW, m)
    N = K.shape[0]

    if 2 * N <= dense_limit:
        Kh = K.hermitian_entries()
        Wh = W.hermitian_entries()
        comp = np.zeros((2 * N, 2 * N), dtype=complex)
        comp[:N, N:] = np.eye(N)
        comp[N:, :N] = 16.0 * (Wh @ Wh)
        comp[N:, N:] = 8.0 * m * Kh
        vals, vecs = np.linalg.eig(comp)
    else:
        def mv(x):
            x = np.asarray(x).reshape(2 * N, -1)
            f, g = x[:N], x[N:]
            top = g
            bot = 16.0 * W.matmat(W.matmat(f, frame=True), frame=True) + 8.0 * m * K.matmat(g, frame=True)
            out = np.vstack([top, bot])
            return out
        L = LinearOperator((2 * N, 2 * N), matvec=lambda x: mv(x)[:, 0], matmat=mv, dtype=complex)
        try:
            vals, vecs = eigs(L, k=6, which="LR", tol=1e-13, ncv=60, v0=_v0(2 * N), maxiter=200 * N)
        except ArpackNoConvergence as exc:
            raise SpectralError(f"ARPACK did not converge for the companion pencil: {exc}") from exc
    real = np.abs(vals.imag) < 1e-8 * np.maximum(np.abs(vals.real), 1.0)
    cand = np.nonzero(real & (vals.real > 2.0))[0]
    if len(cand) == 0:
        raise SpectralError("quadratic eigenproblem has no real eigenvalue above 2 (assembly failure?)")
    best = cand[np.argmax(vals.real[cand])]
    lam = float(vals.real[best])
    f = vecs[:N, best]
    # back to the plain basis; remove the arbitrary phase
    f = _fix_phase((f / np.sqrt(K.weight))[:, None])[:, 0]
    f = f / K.norm(f)
    res, gap = _certificate(K, W, m, lam, f)
    out = LambdaOmegaResult(lam, "qep", f, res, gap, (lo, hi), nK, nW,
                            weakened_threshold=_weakened(nW), above_threshold=lam > _TWO_SQRT2)
    if not (lo * (1 - bracket_tol) <= lam <= hi * (1 + bracket_tol)):
        raise BracketError(
            f"lambda_omega = {lam:.12g} outside the bracket [{lo:.12g}, {hi:.12g}] (norms |K| = {nK:.6g}, |W| = {nW:.6g})"
        )
    return out


class _TLambda:
    """Hermitian-frame ``T_lam = (16 W^2 - 4 + 8 m lam K) / (lam^2 - 4)`` with warm starts."""

    def __init__(self, K, W, m, dense_limit):
        self.K, self.W, self.m = K, W, m
        self.N = K.shape[0]
        self.dense = self.N <= min(dense_limit, 300)
        if self.dense:
            Kh = K.hermitian_entries()
            Wh = W.hermitian_entries()
            self.A = 16.0 * (Wh @ Wh) - 4.0 * np.eye(self.N)
            self.A = 0.5 * (self.A + self.A.conj().T)
            self.B = 0.5 * (Kh + Kh.conj().T)
        self.v = _v0(self.N, 1)

    def top(self, lam):
        """Largest eigenvalue and eigenvector of ``T_lam`` (frame)."""
        scale = 1.0 / (lam * lam - 4.0)
        if self.dense:
            w, U = np.linalg.eigh(scale * (self.A + 8.0 * self.m * lam * self.B))
            return float(w[-1]), U[:, -1]
        K, W, m = self.K, self.W, self.m

        def mv(x):
            x = np.asarray(x).reshape(self.N, -1)
            y = 16.0 * W.matmat(W.matmat(x, frame=True), frame=True) - 4.0 * x + 8.0 * m * lam * K.matmat(x, frame=True)
            return scale * y

        L = LinearOperator((self.N, self.N), matvec=lambda x: mv(x)[:, 0], matmat=mv, dtype=complex)
        try:
            w, U = eigsh(L, k=1, which="LA", tol=1e-13, v0=self.v, ncv=40, maxiter=100 * self.N)
        except ArpackNoConvergence as exc:
            raise SpectralError(f"ARPACK did not converge for T_lambda: {exc}") from exc
        self.v = U[:, 0]
        return float(w[0]), U[:, 0]

    def norm(self, lam):
        """Operator norm; for ``lam > 2 sqrt 2`` it equals the largest eigenvalue."""
        top, vec = self.top(lam)
        if lam > _TWO_SQRT2 or top >= 1.0:
            return top, vec
        # below 2 sqrt 2 the most negative eigenvalue can dominate
        if self.dense:
            scale = 1.0 / (lam * lam - 4.0)
            w = np.linalg.eigvalsh(scale * (self.A + 8.0 * self.m * lam * self.B))
            return float(max(abs(w[0]), abs(w[-1]))), vec
        return top, vec


def lambda_omega_bisect(K: DenseOperator, W: DenseOperator, m: float, norm_K: float | None = None,
                        norm_W: float | None = None, rtol: float = 1e-12, max_iter: int = 200,
                        dense_limit: int = DENSE_LIMIT) -> LambdaOmegaResult:
    """Critical coupling as the root of ``|T_lam| - 1`` on the a priori bracket.

    Works with the largest eigenvalue of ``T_lam``, which is continuous and
    decreasing beyond ``2 sqrt 2``; the root is refined by bisection and a
    final secant step.  When the bracket does not produce a sign change the
    result is returned with ``notes`` describing the failure.
    """
    _check_inputs(K, W, m)
    nK, nW = _norms(K, W, norm_K, norm_W)
    lo_b, hi_b = lambda_omega_bracket(nK, nW, m)
    T = _TLambda(K, W, m, dense_limit)
    notes = []
    lo = max(lo_b * (1 - 1e-6), 2.0 + 1e-9)
    hi = hi_b * (1 + 1e-6)
    flo = T.top(lo)[0] - 1.0
    fhi = T.top(hi)[0] - 1.0
    it = 0
    while fhi > 0 and it < 20:
        hi *= 2.0
        fhi = T.top(hi)[0] - 1.0
        it += 1
    if flo < 0:
        step = 0
        while flo < 0 and lo > 2.0 + 1e-6 and step < 60:
            lo = 2.0 + 0.5 * (lo - 2.0)
            flo = T.top(lo)[0] - 1.0
            step += 1
        notes.append("lower bracket end moved toward 2")
    if not (flo >= 0 >= fhi):
        notes.append("no sign change of |T_lam| - 1 on the bracket")
        lam = float("nan")
        f = np.full(K.shape[0], np.nan, dtype=complex)
        return LambdaOmegaResult(lam, "bisection", f, float("nan"), float("nan"), (lo_b, hi_b), nK, nW,
                                 weakened_threshold=_weakened(nW), above_threshold=False,
                                 iterations=0, notes=notes)
    n_it = 0
    while hi - lo > rtol * hi and n_it < max_iter:
        mid = 0.5 * (lo + hi)
        fm = T.top(mid)[0] - 1.0
        if fm > 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        n_it += 1
    lam = hi if flo == fhi else lo - flo * (hi - lo) / (fhi - flo)
    lam = float(min(max(lam, lo), hi))
    _, u = T.top(lam)
    f = _fix_phase((u / np.sqrt(K.weight))[:, None])[:, 0]
    f = f / K.norm(f)
    res, gap = _certificate(K, W, m, lam, f)
    if lam <= _TWO_SQRT2:
        notes.append("lambda_omega <= 2 sqrt 2: minimizer argument not guaranteed")
    return LambdaOmegaResult(lam, "bisection", f, res, gap, (lo_b, hi_b), nK, nW,
                             weakened_threshold=_weakened(nW), above_threshold=lam > _TWO_SQRT2,
                             iterations=n_it, notes=notes)
