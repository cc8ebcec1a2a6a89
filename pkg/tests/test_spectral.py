import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from shellspec.assembly import DenseOperator, assemble_K, assemble_W
from shellspec.kernels import I2, PhysicalParams
from shellspec.mesh import generate_icosphere
from shellspec.spectral import (
    BracketError,
    SpectralError,
    all_eigenvalues,
    clustered_eigenpairs,
    extreme_eigenvalues,
    lambda_omega_bisect,
    lambda_omega_bracket,
    lambda_omega_qep,
    operator_norm,
    quadratic_form,
    weighted_hermitian_eig,
)


def synthetic(n, seed, d=1):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((n, n))
    R = R + R.T
    areas = rng.uniform(0.5, 2.0, n)
    E = np.eye(d)
    return DenseOperator([(R, E)], areas, name="syn"), R, areas


def generalized(R, areas):
    # independent reference: R v = c diag(areas) v
    return np.sort(linalg.eigh(R, np.diag(areas), eigvals_only=True))[::-1]


@given(n=st.integers(3, 40), seed=st.integers(0, 10_000))
def test_eigenvalues_match_generalized_problem(n, seed):
    op, R, areas = synthetic(n, seed)
    ref = generalized(R, areas)
    np.testing.assert_allclose(all_eigenvalues(op), ref, atol=1e-10 * np.abs(ref).max())
    rep = weighted_hermitian_eig(op)
    np.testing.assert_allclose(rep.eigenvalues, ref, atol=1e-10 * np.abs(ref).max())
    G = rep.eigenvectors.conj().T @ (op.weight[:, None] * rep.eigenvectors)
    np.testing.assert_allclose(G, np.eye(n), atol=1e-10)
    assert rep.residuals.max() < 1e-10 * np.abs(ref).max()


@pytest.mark.parametrize("which", ["LM", "LA", "SA"])
def test_arpack_path_agrees_with_dense(which):
    op, R, areas = synthetic(120, 3)
    ref = generalized(R, areas)
    got = weighted_hermitian_eig(op, k=5, which=which, dense_limit=0).eigenvalues
    if which == "LM":
        exp = np.sort(ref[np.argsort(-np.abs(ref))[:5]])[::-1]
    elif which == "LA":
        exp = ref[:5]
    else:
        exp = ref[-5:]
    np.testing.assert_allclose(got, exp, atol=1e-9)
    np.testing.assert_allclose(extreme_eigenvalues(op, 5, which, dense_limit=0), exp, atol=1e-9)


@pytest.mark.parametrize("which", ["LM", "SM", "LA", "SA"])
@pytest.mark.parametrize("dense_limit", [0, 10_000])
def test_clusters_are_complete(which, dense_limit):
    # every eigenvalue has multiplicity two through the 2x2 identity factor
    op, R, areas = synthetic(80, 11, d=2)
    rep = clustered_eigenpairs(op, 7, which, dense_limit=dense_limit)
    w = rep.eigenvalues
    assert len(w) >= 7 and len(w) % 2 == 0
    vals, counts = np.unique(np.round(w, 8), return_counts=True)
    assert np.all(counts == 2)
    ref = generalized(R, areas)
    key = {"LM": -np.abs(ref), "SM": np.abs(ref), "LA": -ref, "SA": ref}[which]
    exp = np.repeat(ref[np.argsort(key)][: len(w) // 2], 2)
    np.testing.assert_allclose(w, exp, atol=1e-8)
    assert rep.residuals.max() < 1e-8


def test_cluster_rejects_unknown_selection():
    op, _, _ = synthetic(10, 0)
    with pytest.raises(ValueError):
        clustered_eigenpairs(op, 2, "XX")


def test_non_finite_operator_raises():
    op, R, areas = synthetic(6, 0)
    R[0, 0] = np.nan
    with pytest.raises(SpectralError):
        weighted_hermitian_eig(DenseOperator([(R, np.eye(1))], areas))


def test_norm_is_largest_magnitude():
    op, R, areas = synthetic(50, 5)
    assert operator_norm(op) == pytest.approx(np.abs(generalized(R, areas)).max(), rel=1e-12)
    zero = DenseOperator([(np.zeros((4, 4)), np.eye(1))], np.ones(4))
    assert operator_norm(zero) == 0.0


def test_bracket_formula():
    lo, hi = lambda_omega_bracket(1.0, 0.5, 1.0)
    assert lo == hi == pytest.approx(4 * (1 + np.sqrt(1.25)), rel=1e-15)
    lo, hi = lambda_omega_bracket(0.8, 0.7, 2.0)
    assert lo == pytest.approx(4 * (1.6 + np.sqrt(1.6**2 + 0.25)))
    assert hi == pytest.approx(4 * (1.6 + np.sqrt(1.6**2 + 0.49)))


@pytest.fixture(scope="module")
def sphere_KW():
    mesh = generate_icosphere(1.0, 1)
    p = PhysicalParams(1.0, 1.0)
    return assemble_K(mesh, p), assemble_W(mesh, p)


def test_qep_and_bisection_agree(sphere_KW):
    K, W = sphere_KW
    q = lambda_omega_qep(K, W, 1.0)
    b = lambda_omega_bisect(K, W, 1.0)
    assert q.lambda_omega == pytest.approx(b.lambda_omega, rel=1e-8)
    assert q.in_bracket and q.above_threshold
    assert q.residual < 1e-8 and q.form_gap < 1e-8
    # the achieving density saturates the quadratic form
    assert quadratic_form(K, W, 1.0, q.lambda_omega, q.density) == pytest.approx(1.0, rel=1e-8)
    assert q.as_dict()["method"] == "qep"


def test_qep_arpack_path(sphere_KW):
    K, W = sphere_KW
    dense = lambda_omega_qep(K, W, 1.0).lambda_omega
    sparse = lambda_omega_qep(K, W, 1.0, dense_limit=0).lambda_omega
    assert sparse == pytest.approx(dense, rel=1e-9)


def test_bracket_violation_raises(sphere_KW):
    K, W = sphere_KW
    with pytest.raises(BracketError):
        lambda_omega_qep(K, W, 1.0, norm_K=0.1, norm_W=0.1)


@settings(max_examples=10)
@given(scale=st.floats(0.3, 3.0))
def test_critical_coupling_of_scaled_identity_blocks(scale):
    # K = k I and W = w I_s with a Hermitian unitary spin part give lam^2 = 16 w^2 + 8 m lam k
    n = 6
    areas = np.full(n, 0.5)
    K = DenseOperator([(scale * areas, I2)], areas)
    Wspin = np.array([[0.0, 1.0], [1.0, 0.0]])
    W = DenseOperator([(0.5 * areas, Wspin)], areas)
    exp = 4 * (scale + np.sqrt(scale**2 + 0.25))
    for solver in (lambda_omega_qep, lambda_omega_bisect):
        assert solver(K, W, 1.0).lambda_omega == pytest.approx(exp, rel=1e-9)
