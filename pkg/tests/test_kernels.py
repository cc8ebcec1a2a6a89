import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shellspec.kernels import (
    ALPHA,
    BETA,
    I4,
    PAULI,
    ParameterError,
    PhysicalParams,
    SingularPointError,
    alpha_dot,
    decay_rate,
    dphi_da,
    k_a,
    kernel_split,
    phi_a,
    sigma_dot,
    w_a,
)

vectors = st.tuples(*[st.floats(-2, 2)] * 3).map(np.array).filter(lambda v: np.linalg.norm(v) > 0.2)


def test_dirac_matrix_algebra():
    for j in range(3):
        assert np.allclose(ALPHA[j] @ BETA + BETA @ ALPHA[j], 0)
        for k in range(3):
            anti = ALPHA[j] @ ALPHA[k] + ALPHA[k] @ ALPHA[j]
            assert np.allclose(anti, 2 * (j == k) * I4)
    assert np.allclose(BETA @ BETA, I4)
    assert np.allclose(PAULI[0] @ PAULI[1], 1j * PAULI[2])


def test_static_value_on_unit_sphere():
    p = PhysicalParams(1.0, 1.0)
    assert p.kappa == 0.0
    assert k_a(np.array([0.0, 0.0, 1.0]), p) == pytest.approx(1 / (4 * np.pi), rel=1e-15)


def test_params_validation():
    with pytest.raises(ParameterError):
        PhysicalParams(0.0, 0.0)
    with pytest.raises(ParameterError):
        PhysicalParams(1.0, 1.5)
    assert decay_rate(1.0, 1.0 + 1e-16) == 0.0
    assert not PhysicalParams(1.0, -1.0).interior


def test_zero_separation_raises():
    with pytest.raises(SingularPointError):
        phi_a(np.zeros(3), PhysicalParams(1.0, 0.2))


@given(x=vectors, a=st.floats(-0.95, 0.95))
def test_split_reassembles_full_kernel(x, a):
    p = PhysicalParams(1.0, a)
    w1, w2, w3 = kernel_split(x, p)
    np.testing.assert_allclose(w1 + w2 + w3, phi_a(x, p), atol=1e-13)


@given(x=vectors, a=st.floats(-1, 1))
def test_blocks_of_phi(x, a):
    # off-diagonal blocks of the 4x4 kernel are the Pauli kernel, diagonal ones the scalar kernel
    p = PhysicalParams(1.0, a)
    ph = phi_a(x, p)
    np.testing.assert_allclose(ph[:2, 2:], w_a(x, p), atol=1e-14)
    np.testing.assert_allclose(ph[:2, :2], (a + 1.0) * k_a(x, p) * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(ph[2:, 2:], (a - 1.0) * k_a(x, p) * np.eye(2), atol=1e-14)


@given(x=vectors, a=st.floats(-0.9, 0.9))
def test_parameter_derivative_matches_difference(x, a):
    m, h = 1.0, 1e-5
    fd = (phi_a(x, PhysicalParams(m, a + h)) - phi_a(x, PhysicalParams(m, a - h))) / (2 * h)
    np.testing.assert_allclose(dphi_da(x, PhysicalParams(m, a)), fd, atol=1e-7)


def test_derivative_undefined_at_gap_edge():
    with pytest.raises(ParameterError):
        dphi_da(np.ones(3), PhysicalParams(1.0, 1.0))


def dirac_residual(x, p, h):
    grad = [(phi_a(x + h * e, p) - phi_a(x - h * e, p)) / (2 * h) for e in np.eye(3)]
    out = sum(-1j * ALPHA[k] @ grad[k] for k in range(3))
    return np.abs(out + (p.m * BETA - p.a * I4) @ phi_a(x, p)).max()


@pytest.mark.parametrize("a", [-0.6, 0.0, 0.5, 1.0])
def test_fundamental_solution_is_annihilated(a):
    p = PhysicalParams(1.0, a)
    x = np.array([0.4, -0.7, 0.9])
    r1, r2 = dirac_residual(x, p, 1e-2), dirac_residual(x, p, 5e-3)
    assert r2 < 1e-4
    assert r1 / r2 == pytest.approx(4.0, rel=0.05)


def test_vectorized_shapes():
    x = np.random.default_rng(1).standard_normal((5, 7, 3))
    p = PhysicalParams(2.0, 0.3)
    assert phi_a(x, p).shape == (5, 7, 4, 4)
    assert w_a(x, p).shape == (5, 7, 2, 2)
    assert k_a(x, p).shape == (5, 7)
    np.testing.assert_allclose(alpha_dot(x)[2, 3], sum(x[2, 3, k] * ALPHA[k] for k in range(3)))
    np.testing.assert_allclose(sigma_dot(x)[0, 0], sum(x[0, 0, k] * PAULI[k] for k in range(3)))
