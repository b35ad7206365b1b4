import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsurg import solver
from specsurg.potential import BoundaryCondition, Potential, Problem

K_REAL = np.linspace(0.1, 10.0, 50)


def f_example(k, x):
    return np.exp(1j * k * x) * (1 - 2j / ((k + 1j) * (1 + np.exp(2 * x))))


def phi_example(k, x):
    return -(k * np.sin(k * x) + np.cos(k * x) * np.tanh(x)) / (k * k + 1)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("boundary", ["dirichlet", "neumann"])
def test_free_jost_and_scattering_are_exact(n, boundary):
    p = Problem.free(n, boundary)
    ks = np.array([0.1, 1.0, 7.5])
    J = solver.jost_matrices(p, ks)
    S = solver.scattering_matrices(p, ks)
    eye = np.eye(n)
    if boundary == "dirichlet":
        J_ref = np.broadcast_to(-eye, J.shape)
        S_ref = np.broadcast_to(-eye, S.shape)
    else:
        J_ref = -1j * ks[:, None, None] * eye
        S_ref = np.broadcast_to(eye, S.shape)
    assert np.abs(J - J_ref).max() < 1e-10
    assert np.abs(S - S_ref).max() < 1e-10


@pytest.mark.parametrize("k", [0.5, 2.0, 0.3 + 0.4j, 1.5j])
def test_example_jost_solution_closed_form(example89, k):
    xs = np.linspace(0, 5, 11)
    sol = solver.jost_solution(example89, k, xs)
    assert np.abs(sol.psi[:, 0, 0] - f_example(k, xs)).max() < 1e-8


@pytest.mark.parametrize("k", [0.5, 2.0, 0.3 + 0.4j])
def test_example_regular_solution_closed_form(example89, k):
    xs = np.linspace(0, 5, 11)
    sol = solver.regular_solution(example89, k, xs)
    ref = phi_example(k, xs)
    assert np.abs(sol.psi[:, 0, 0] - ref).max() < 1e-8 * max(1.0, np.abs(ref).max())


def test_example_jost_and_scattering_matrices(example89):
    J = solver.jost_matrices(example89, K_REAL)[:, 0, 0]
    S = solver.scattering_matrices(example89, K_REAL)[:, 0, 0]
    J_ref = -K_REAL / (K_REAL + 1j)
    S_ref = -(K_REAL + 1j) / (K_REAL - 1j)
    assert np.max(np.abs(J - J_ref) / np.abs(J_ref)) < 1e-6
    assert np.max(np.abs(S - S_ref) / np.abs(S_ref)) < 1e-6


def test_jost_matrix_at_zero_is_averaged(example89):
    # J(k) = -k/(k+i) vanishes at k = 0
    assert abs(solver.jost_matrix(example89, 0.0).J[0, 0]) < 1e-5


def _random_problem(seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 3, 301)
    H = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    H = H + H.conj().T
    V = np.exp(-x)[:, None, None] * H * np.sin(3 * x)[:, None, None]
    U, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    theta = rng.uniform(0, np.pi)
    return Problem(Potential.grid(x, V), BoundaryCondition(-np.sin(theta) * U, np.cos(theta) * U))


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.floats(0.2, 8.0))
def test_scattering_is_unitary_and_symmetric(seed, k):
    p = _random_problem(seed)
    S, Sm = solver.scattering_matrices(p, [k, -k])
    eye = np.eye(2)
    assert np.abs(S.conj().T @ S - eye).max() < 1e-7
    assert np.abs(Sm @ S - eye).max() < 1e-7


def test_physical_solution_satisfies_boundary_condition(compact):
    sol = solver.physical_solution(compact, 1.7, np.linspace(0, 4, 9))
    psi0, dpsi0 = sol.at(0.0)
    resid = -compact.B.conj().T @ psi0 + compact.A.conj().T @ dpsi0
    assert np.abs(resid).max() < 1e-8


def test_gram_companions_for_free_problem():
    p = Problem.free(1)
    kappa = 0.8
    xs = np.linspace(0, 3, 7)
    jost = solver.jost_solution(p, 1j * kappa, xs, gram=True)
    assert np.allclose(jost.gram[:, 0, 0].real, np.exp(-2 * kappa * xs) / (2 * kappa), rtol=1e-8)
    reg = solver.regular_solution(p, 1j * kappa, xs, gram=True)
    ref = (np.sinh(2 * kappa * xs) / (2 * kappa) - xs) / (2 * kappa**2)
    assert np.allclose(reg.gram[:, 0, 0].real, ref, rtol=1e-8, atol=1e-14)


def test_growing_solution_for_free_problem():
    sol = solver.growing_solution(Problem.free(1), 1.2j, np.linspace(0, 2, 5))
    assert np.allclose(sol.psi[:, 0, 0], np.exp(1.2 * np.linspace(0, 2, 5)), rtol=1e-8)


def test_solver_preconditions():
    p = Problem.free(1)
    with pytest.raises(ValueError, match="Im k"):
        solver.jost_batch(p, [1 - 1j], [0.0])
    with pytest.raises(ValueError, match="k != 0"):
        solver.scattering_matrices(p, [0.0])
    with pytest.raises(ValueError):
        solver.growing_solution(p, 1.0)


def test_tolerance_override(monkeypatch):
    monkeypatch.setenv("SPECSURG_TOL", "1e-6")
    assert solver.default_rtol() == 1e-6
    monkeypatch.setenv("SPECSURG_TOL", "2")
    with pytest.raises(ValueError, match="SPECSURG_TOL"):
        solver.default_rtol()
    monkeypatch.delenv("SPECSURG_TOL")
    assert solver.default_rtol() == solver.RTOL
