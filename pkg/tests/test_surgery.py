import json

import numpy as np
import pytest

from specsurg import spectra, surgery
from specsurg.potential import BoundaryCondition, Potential, Problem
from test_potential import added_state_potential_mp


def free_added_potential(x, kappa, c):
    """Single state added to free Dirichlet: -2 d/dx [c^2 phi^2 / (1 + c^2 int_0^x phi^2)]."""
    g = c * c
    phi = np.sinh(kappa * x) / kappa
    integral = (np.sinh(2 * kappa * x) / (2 * kappa) - x) / (2 * kappa**2)
    den = 1 + g * integral
    return -2 * (2 * g * phi * np.cosh(kappa * x) / den - g * g * phi**4 / den**2)


@pytest.fixture(scope="module")
def added89():
    return surgery.apply_plan(Problem.example89(), surgery.SurgeryPlan.add(1.0, [[4.0]]))


@pytest.mark.parametrize("kappa,c", [(0.7, 1.7), (1.5, 0.4)])
def test_add_to_free_problem_matches_closed_form(kappa, c):
    r = surgery.apply_plan(Problem.free(1), surgery.SurgeryPlan.add(kappa, [[c]]))
    V = np.asarray(r.problem.potential.values)[:, 0, 0]
    assert np.abs(V - free_added_potential(r.xs, kappa, c)).max() < 1e-8
    assert r.problem.boundary.is_legal()


def test_example_addition(added89):
    r = added89
    assert np.all(r.problem.A == 0)
    assert np.all(r.problem.B == -1)
    x = np.linspace(0, 10, 1001)
    V = r.problem.potential(x)[:, 0, 0]
    ref = Potential.catalog("example89_added")(x)[:, 0, 0]
    assert np.abs(V - ref).max() < 1e-6
    assert V[100].real == pytest.approx(added_state_potential_mp(1.0), rel=1e-6)
    ks = np.array([0.3, 1.0, 4.0, 0.5 + 0.5j])
    J = r.transformed_jost(ks)[:, 0, 0]
    assert np.abs(J - (-ks * (ks - 1j) / (ks + 1j) ** 2)).max() < 1e-6


def test_example_result_json(added89):
    text = added89.to_json()
    d = json.loads(text)
    assert d["plan"]["kind"] == "add"
    assert d["kind"] == "grid" and len(d["x"]) == len(d["V"])
    assert text == added89.to_json()


def test_addition_gl_residual(added89):
    assert surgery.gl_residual(added89) < 1e-8


def test_decay_fit_on_synthetic_tail():
    x = np.linspace(0, 12, 1201)
    fit = surgery.decay_fit(x, np.zeros_like(x), 3.0 * x**2 * np.exp(-2 * x), 1.0)
    assert fit.model == "x2e"
    assert fit.constant == pytest.approx(3.0, rel=1e-10)
    assert fit.slope_diag == pytest.approx(2.0, abs=1e-8)
    assert fit.diverges
    fit = surgery.decay_fit(x, np.zeros_like(x), -0.5 * np.exp(-2 * x), 1.0)
    assert fit.model == "e" and fit.constant == pytest.approx(-0.5) and not fit.diverges


def test_split_normalization():
    v = np.array([[1.0], [1j]]) / np.sqrt(2)
    R, G = surgery.split_normalization(2.0 * v @ v.conj().T)
    assert np.allclose(R, v @ v.conj().T)
    assert np.allclose(G, 0.25 * v @ v.conj().T)
    with pytest.raises(surgery.SurgeryError, match="semidefinite"):
        surgery.split_normalization(-np.eye(2))


@pytest.mark.parametrize(
    "kwargs,match",
    [
        ({"kind": "move", "kappa": 1.0}, "kind"),
        ({"kind": "remove", "kappa": -1.0}, "positive"),
        ({"kind": "add", "kappa": 1.0}, "needs C"),
        ({"kind": "increase", "kappa": 1.0, "Q_i": np.eye(2)}, "needs G_i"),
    ],
)
def test_plan_validation(kwargs, match):
    with pytest.raises(surgery.SurgeryError, match=match):
        surgery.SurgeryPlan(**kwargs)


def test_plan_round_trip():
    plan = surgery.SurgeryPlan.increase(0.5, np.diag([0, 1]), np.diag([0, 2]))
    back = surgery.SurgeryPlan.from_dict(plan.to_dict(), 2)
    assert back.kind == "increase" and np.array_equal(back.G_i, plan.G_i)


def test_collision_is_rejected():
    p = Problem(Potential.catalog("example89_added"), BoundaryCondition.dirichlet(1))
    with pytest.raises(surgery.SurgeryError, match="distinct from κ_j"):
        surgery.apply_plan(p, surgery.SurgeryPlan.add(1.0, [[1.0]]))


def test_missing_state_is_rejected():
    with pytest.raises(surgery.SurgeryError, match="no bound state"):
        surgery.apply_plan(Problem.free(1), surgery.SurgeryPlan.remove(1.0))


@pytest.fixture(scope="module")
def double_state():
    p = Problem(Potential.catalog("free", 2), BoundaryCondition(np.eye(2), -0.5 * np.eye(2)))
    return p, spectra.find_bound_states(p)


def test_decrease_leaves_remaining_direction(double_state):
    p, spec = double_state
    Q_r = np.diag([1.0, 0.0])
    r = surgery.apply_plan(p, surgery.SurgeryPlan.decrease(0.5, Q_r), spectrum=spec)
    assert r.problem.boundary.is_legal()
    after = spectra.find_bound_states(r.problem)
    assert [s.m for s in after.states] == [1]
    assert after.states[0].kappa == pytest.approx(0.5, abs=1e-7)
    assert np.allclose(after.states[0].Q, np.eye(2) - Q_r, atol=1e-6)


@pytest.mark.parametrize(
    "Q_r,match",
    [(np.diag([1.0, 0.5]), "projection"), (np.array([[1.0, 0.0], [0.0, 0.0]]) * 0, "rank")],
)
def test_decrease_preconditions(double_state, Q_r, match):
    p, spec = double_state
    with pytest.raises(surgery.SurgeryError, match=match):
        surgery.apply_plan(p, surgery.SurgeryPlan.decrease(0.5, Q_r), spectrum=spec)


def test_increase_preconditions(double_state):
    p, spec = double_state
    with pytest.raises(surgery.SurgeryError, match="orthogonal"):
        surgery.apply_plan(p, surgery.SurgeryPlan.increase(0.5, np.diag([1.0, 0.0]), np.diag([1.0, 0.0])), spectrum=spec)
    scalar = Problem(Potential.catalog("free", 1), BoundaryCondition(np.eye(1), -0.5 * np.eye(1)))
    with pytest.raises(surgery.SurgeryError, match="n >= 2"):
        surgery.apply_plan(scalar, surgery.SurgeryPlan.increase(0.5, [[1.0]], [[1.0]]))


def test_increase_adds_kernel_directions():
    p = Problem(Potential.catalog("free", 2), BoundaryCondition(np.eye(2), -np.diag([0.5, 1.5])))
    spec = spectra.find_bound_states(p)
    Q_i = np.diag([0.0, 1.0])
    r = surgery.apply_plan(p, surgery.SurgeryPlan.increase(0.5, Q_i, 2.0 * Q_i), spectrum=spec)
    assert r.problem.boundary.is_legal()
    after = spectra.find_bound_states(r.problem)
    state = after.nearest(0.5)
    assert state.kappa == pytest.approx(0.5, abs=1e-7) and state.m == 2
    # the new kernel contains both the old and the added directions
    assert np.abs(state.Q @ Q_i - Q_i).max() < 1e-6
    assert np.abs(state.Q @ spec.nearest(0.5).Q - spec.nearest(0.5).Q).max() < 1e-6
    assert after.nearest(1.5).kappa == pytest.approx(1.5, abs=1e-7)
