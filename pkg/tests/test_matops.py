import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsurg import matops


def _random(n, rank, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    R = rng.normal(size=(rank, n)) + 1j * rng.normal(size=(rank, n))
    return L @ R


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), data=st.data(), seed=st.integers(0, 2**32 - 1))
def test_pinv_satisfies_penrose_equalities(n, data, seed):
    rank = data.draw(st.integers(0, n))
    M = _random(n, rank, seed)
    Mp = matops.pinv(M)
    r = matops.penrose_residuals(M, Mp)
    scale = max(1.0, np.linalg.norm(M, 2), np.linalg.norm(Mp, 2)) ** 2
    assert max(r) < 1e-10 * scale
    assert matops.rank_info(M).rank == rank


@pytest.mark.parametrize("n,rank", [(2, 1), (3, 1), (3, 2), (4, 0)])
def test_kernel_and_range_projections(n, rank):
    M = _random(n, rank, 7)
    Q, info = matops.kernel_projection(M)
    P = matops.range_projection(M)
    assert info.rank == rank
    assert np.allclose(Q @ Q, Q, atol=1e-12) and np.allclose(Q, Q.conj().T)
    assert np.linalg.norm(M @ Q) < 1e-10 * max(1.0, np.linalg.norm(M))
    assert np.trace(Q).real == pytest.approx(n - rank)
    assert np.allclose(P @ M, M, atol=1e-10)
    assert matops.projection_basis(Q).shape == (n, n - rank)


def test_pinv_of_zero_is_zero():
    assert np.all(matops.pinv(np.zeros((3, 3))) == 0)


def test_square_roots():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    H = X @ X.conj().T + np.eye(3)
    R = matops.sqrt_pos(H)
    assert np.allclose(R @ R, H, atol=1e-12)
    assert np.allclose(matops.inv_sqrt_pos(H) @ R, np.eye(3), atol=1e-12)
    v = np.array([[1.0], [1j], [0.0]])
    S = matops.psd_sqrt(v @ v.conj().T)
    assert np.allclose(S @ S, v @ v.conj().T, atol=1e-12)


@pytest.mark.parametrize("M", [np.array([[1.0, 2.0], [0.0, 1.0]]), -np.eye(2)])
def test_positive_functions_reject_bad_input(M):
    with pytest.raises(ValueError):
        matops.sqrt_pos(M)


def test_shape_validation():
    with pytest.raises(ValueError, match="square"):
        matops.pinv(np.ones((2, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        matops.pinv(np.array([[np.nan]]))
    with pytest.raises(ValueError, match="dimension mismatch"):
        matops.pinv_derivative(np.eye(2), np.eye(3))


def test_pinv_derivative_matches_finite_difference():
    # W(x) = U diag(w(x)) U^dagger on a fixed rank-2 range inside C^3
    rng = np.random.default_rng(3)
    U, _ = np.linalg.qr(rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2)))

    def W(x):
        return U @ np.diag([1 + x * x, 2 + np.sin(x)]) @ U.conj().T

    def dW(x):
        return U @ np.diag([2 * x, np.cos(x)]) @ U.conj().T

    x, h = 0.4, 1e-5
    fd = (matops.pinv(W(x + h)) - matops.pinv(W(x - h))) / (2 * h)
    assert np.allclose(matops.pinv_derivative(matops.pinv(W(x)), -dW(x)), fd, atol=1e-8)


def test_restricted_inverse_matches_pinv():
    rng = np.random.default_rng(5)
    U, _ = np.linalg.qr(rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2)))
    W = U @ np.array([[2.0, 0.3], [0.3, 1.0]]) @ U.conj().T
    Q = U @ U.conj().T
    assert np.allclose(matops.restricted_inverse(W, Q), matops.pinv(W), atol=1e-12)
    stack = np.stack([W, 2 * W])
    out = matops.restricted_inverse(stack, Q)
    assert np.allclose(out[1], 0.5 * matops.pinv(W), atol=1e-12)
