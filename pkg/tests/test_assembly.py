import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellspec import _backend
from shellspec.assembly import (
    Assembler,
    DenseOperator,
    PointOnSurfaceError,
    assemble_C,
    assemble_dC_da,
    assemble_K,
    assemble_W,
    assembler_for,
    dump_operator,
    evaluate_potential,
    load_operator_dump,
    multiplier,
)
from shellspec.kernels import ALPHA, BETA, I4, PhysicalParams
from shellspec.mesh import generate_ellipsoid, generate_icosphere

SPHERE1 = generate_icosphere(1.0, 1)
ELL1 = generate_ellipsoid((1.5, 1.0, 0.8), 1)


def hermitian_defect(op):
    H = op.hermitian_entries()
    return np.abs(H - H.conj().T).max()


@pytest.mark.parametrize("a", [-1.0, -0.3, 0.0, 0.7, 1.0])
def test_C_is_weighted_hermitian(a):
    C = assemble_C(ELL1, PhysicalParams(1.0, a))
    assert hermitian_defect(C) < 1e-13
    A = C.entries
    w = C.weight
    # weighted Hermitian: M A = (M A)^*
    MA = w[:, None] * A
    assert np.abs(MA - MA.conj().T).max() < 1e-13
    assert C.symmetry_residual < 1e-3


def test_matmat_agrees_with_entries(rng):
    C = assemble_C(SPHERE1, PhysicalParams(1.0, 0.2))
    X = rng.standard_normal((C.shape[0], 3)) + 1j * rng.standard_normal((C.shape[0], 3))
    np.testing.assert_allclose(C.matmat(X), C.entries @ X, atol=1e-12)
    np.testing.assert_allclose(C.matmat(X, frame=True), C.hermitian_entries() @ X, atol=1e-12)
    np.testing.assert_allclose(C.linear_operator(frame=False).matvec(X[:, 0]), C.entries @ X[:, 0], atol=1e-12)
    np.testing.assert_allclose(C.adjoint_matmat(X), C.entries.conj().T @ X, atol=1e-12)


def test_inner_product_and_sum():
    K = assemble_K(SPHERE1, PhysicalParams(1.0, 0.0))
    f = np.ones(K.shape[0], dtype=complex)
    assert K.norm(f) ** 2 == pytest.approx(2 * SPHERE1.area)
    assert K.inner(f, 2j * f) == pytest.approx(-4j * SPHERE1.area)
    S = K + K.scaled(-1.0)
    assert np.abs(S.entries).max() < 1e-15
    with pytest.raises(ValueError):
        DenseOperator([(np.eye(2), np.eye(1))], np.array([1.0, 0.0]))


def test_multipliers_square_to_identity():
    for which, d in (("alpha", 4), ("sigma", 2)):
        M = multiplier(ELL1, which)
        P = M.entries @ M.entries
        np.testing.assert_allclose(P, np.eye(d * ELL1.n_panels), atol=1e-14)
    with pytest.raises(ValueError):
        multiplier(ELL1, "beta")


def test_single_layer_of_constant_on_sphere():
    mesh = generate_icosphere(1.0, 3)
    K = assemble_K(mesh, PhysicalParams(1.0, 1.0))
    u = K.matmat(np.ones(K.shape[0]))
    assert np.abs(u - 1.0).max() < 1e-2


def test_backends_agree():
    py = Assembler(SPHERE1, backend="python")
    try:
        cy = Assembler(SPHERE1, backend="cython")
    except ImportError:
        pytest.skip("compiled core not built")
    for kappa, a, mode in ((0.0, 0.0, "full"), (0.8, 0.0, "full"), (0.8, 0.6, "deriv")):
        b1, b2 = py.blocks(kappa, a, mode), cy.blocks(kappa, a, mode)
        np.testing.assert_allclose(b1.scalar, b2.scalar, rtol=0, atol=1e-12)
        np.testing.assert_allclose(b1.vector, b2.vector, rtol=0, atol=1e-12)


def test_backend_selection():
    assert _backend.BACKEND in ("python", "cython")
    assert _backend.get_core("python").__name__.endswith("_pycore")
    with pytest.raises(ValueError):
        _backend.get_core("fortran")


def test_thread_count_validation(monkeypatch):
    monkeypatch.setenv("SHELLSPEC_THREADS", "3")
    assert _backend.thread_count() == 3
    for bad in ("0", "two"):
        monkeypatch.setenv("SHELLSPEC_THREADS", bad)
        with pytest.raises(ValueError):
            _backend.thread_count()


@pytest.mark.parametrize("a", [-0.5, 0.0, 0.6])
def test_parameter_derivative_against_central_difference(a):
    asm = assembler_for(ELL1)
    D = assemble_dC_da(ELL1, PhysicalParams(1.0, a), asm).entries
    errs = []
    for h in (0.02, 0.01):
        fd = (assemble_C(ELL1, PhysicalParams(1.0, a + h), asm).entries
              - assemble_C(ELL1, PhysicalParams(1.0, a - h), asm).entries) / (2 * h)
        errs.append(np.abs(fd - D).max() / np.abs(D).max())
    assert errs[1] < 1e-4
    # second-order difference error
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_derivative_positive_form(rng):
    dC = assemble_dC_da(SPHERE1, PhysicalParams(1.0, 0.3))
    w = np.linalg.eigvalsh(0.5 * (dC.hermitian_entries() + dC.hermitian_entries().conj().T))
    assert w.min() > 0


def test_static_blocks_of_C():
    p = PhysicalParams(1.0, 1.0)
    C = assemble_C(SPHERE1, p).entries.reshape(80, 4, 80, 4)
    K = assemble_K(SPHERE1, p).entries.reshape(80, 2, 80, 2)
    W = assemble_W(SPHERE1, p).entries.reshape(80, 2, 80, 2)
    np.testing.assert_allclose(C[:, :2, :, :2], 2 * K, atol=1e-14)
    np.testing.assert_allclose(C[:, 2:, :, 2:], 0, atol=1e-14)
    np.testing.assert_allclose(C[:, :2, :, 2:], W, atol=1e-14)


def test_dump_round_trip(tmp_path):
    C = assemble_C(SPHERE1, PhysicalParams(1.0, -0.25))
    path = tmp_path / "c.bin"
    dump_operator(C, path, -0.25, 1.0, SPHERE1.digest())
    head, data = load_operator_dump(path)
    assert head == {"n": 80, "d": 4, "a": -0.25, "m": 1.0, "mesh_hash": SPHERE1.digest()[:16]}
    np.testing.assert_array_equal(data, C.entries)
    (tmp_path / "bad.bin").write_bytes(b"nonsense" * 8)
    with pytest.raises(ValueError):
        load_operator_dump(tmp_path / "bad.bin")


def test_potential_refuses_surface_points():
    g = np.ones(4 * SPHERE1.n_panels, dtype=complex)
    with pytest.raises(PointOnSurfaceError):
        evaluate_potential(SPHERE1, g, SPHERE1.centroids[:2], PhysicalParams(1.0, 0.0))


@settings(max_examples=10)
@given(a=st.floats(-0.9, 0.9), seed=st.integers(0, 1000))
def test_far_potential_is_a_dirac_solution(a, seed):
    # away from the surface the layer potential solves (H - a) u = 0
    p = PhysicalParams(1.0, a)
    g = np.random.default_rng(seed).standard_normal(4 * SPHERE1.n_panels).astype(complex)
    x0 = np.array([2.5, 0.4, -0.3])
    h = 1e-3
    grads = [(evaluate_potential(SPHERE1, g, x0 + h * e, p) - evaluate_potential(SPHERE1, g, x0 - h * e, p))[0] / (2 * h)
             for e in np.eye(3)]
    u = evaluate_potential(SPHERE1, g, x0, p)[0]
    res = sum(-1j * ALPHA[k] @ grads[k] for k in range(3)) + (BETA - a * I4) @ u
    assert np.abs(res).max() < 1e-4 * max(1.0, np.abs(u).max())
