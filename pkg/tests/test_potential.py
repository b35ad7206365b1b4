import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsurg.potential import (
    BoundaryCondition,
    Potential,
    Problem,
    catalog_names,
    dumps,
    format_number,
    load_problem,
    problem_from_dict,
    problem_to_dict,
    save_problem,
    validate,
)


def added_state_potential_mp(x):
    """High-precision closed form of the example potential after adding kappa=1, C=4."""
    with mpmath.workdps(40):
        x = mpmath.mpf(x)
        q27 = 7 - 24 * x + 32 * x**4 + 64 * x**2 * mpmath.cosh(2 * x) - (16 + 32 * x) * mpmath.sinh(2 * x)
        q28 = -(9 + 8 * x**2) * mpmath.cosh(4 * x) + (-2 + 20 * x) * mpmath.sinh(4 * x)
        den = (1 - 2 * x) * mpmath.cosh(x) + (1 + 4 * x**2 + mpmath.cosh(2 * x)) * mpmath.sinh(x)
        return float((q27 + q28) / den**2)


def test_catalog_lists_required_entries():
    names = catalog_names()
    assert "free" in names and "example89" in names


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.5, 6.0, 10.0, 40.0])
def test_example89_matches_closed_form(x):
    V = Potential.catalog("example89")
    with mpmath.workdps(30):
        ref = float(-8 * mpmath.exp(2 * x) / (1 + mpmath.exp(2 * x)) ** 2)
    assert V(x)[0, 0].real == pytest.approx(ref, rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 3.0, 8.0, 20.0])
def test_added_state_catalog_matches_high_precision(x):
    V = Potential.catalog("example89_added")
    assert V(x)[0, 0].real == pytest.approx(added_state_potential_mp(x), rel=1e-9, abs=1e-14)


def test_catalog_support_end_follows_tail():
    V = Potential.catalog("example89")
    assert V.tail_integral(V.x_max) == pytest.approx(V.eps_tail, rel=1e-6)
    assert V.tail_integral(0.0) == pytest.approx(2.0)
    assert Potential.catalog("free", 3).x_max == 0.0


def test_catalog_dimension_checks():
    with pytest.raises(ValueError, match="dimension"):
        Potential.catalog("example89", 2)
    with pytest.raises(ValueError, match="unknown"):
        Potential.catalog("nope")


def test_grid_interpolation_and_support():
    x = np.linspace(0, 2, 201)
    vals = np.stack([np.diag([np.cos(x_), x_**2]) for x_ in x])
    V = Potential.grid(x, vals, support_end=1.5)
    assert np.allclose(V(0.731), np.diag([np.cos(0.731), 0.731**2]), atol=1e-6)
    assert np.all(V(1.7) == 0)
    assert np.all(V(-0.1) == 0)
    fast = V.stage_evaluator()
    pts = np.array([0.401, 0.405, 0.409])  # one knot interval, as the integrator guarantees
    assert np.allclose(fast(pts), V(pts), atol=1e-14)


@pytest.mark.parametrize(
    "x,vals,match",
    [
        ([0.1, 1.0], np.zeros(2), "start at 0"),
        ([0.0, 1.0, 0.5], np.zeros(3), "increase"),
        ([0.0, 1.0], np.zeros(3), "does not match"),
        ([0.0, 1.0], [[[0, 1], [0, 0]], [[0, 0], [0, 0]]], "hermitian"),
        ([0.0, 1.0], [np.nan, 0.0], "finite"),
    ],
)
def test_grid_rejects_bad_input(x, vals, match):
    with pytest.raises(ValueError, match=match):
        Potential.grid(x, vals)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_standard_boundaries_are_legal(n):
    for bc in (BoundaryCondition.dirichlet(n), BoundaryCondition.neumann(n)):
        assert bc.is_legal()


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(0.0, np.pi), seed=st.integers(0, 1000))
def test_rotated_boundaries_are_legal(theta, seed):
    # A = -sin(theta) U, B = cos(theta) U for unitary U satisfies both conditions
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    assert BoundaryCondition(-np.sin(theta) * U, np.cos(theta) * U).is_legal()


def test_validate_flags_illegal_boundary():
    p = Problem(Potential.catalog("free", 2), BoundaryCondition(np.eye(2), 1j * np.eye(2)))
    report = validate(p)
    assert not report.passed
    assert [c.name for c in report.checks if not c.passed] == ["-B^dag A + A^dag B = 0"]
    p = Problem(Potential.catalog("free", 2), BoundaryCondition(np.diag([1.0, 0.0]), np.diag([0.0, 0.0])))
    assert not validate(p).passed


def test_problem_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        Problem(Potential.catalog("free", 2), BoundaryCondition.dirichlet(1))


@pytest.mark.parametrize("v", [0.1, 1 / 3, -2.5e-300, 1e300, 0.0, -0.0, 123456789.123456789])
def test_format_number_round_trips(v):
    s = format_number(v)
    assert float(s) == v
    assert s != "-0"


def test_format_number_rejects_nan():
    with pytest.raises(ValueError):
        format_number(float("nan"))


def test_problem_json_round_trip(tmp_path):
    x = np.linspace(0, 1, 11)
    vals = np.stack([np.array([[x_, 1j * x_], [-1j * x_, 0]]) for x_ in x])
    p = Problem(Potential.grid(x, vals), BoundaryCondition(np.diag([1.0, 0.0]), np.diag([0.3, -1.0])))
    path = tmp_path / "p.json"
    save_problem(p, path)
    q = load_problem(path)
    assert np.array_equal(q.potential.values, p.potential.values)
    assert np.array_equal(q.A, p.A) and np.array_equal(q.B, p.B)
    assert dumps(problem_to_dict(q)) == path.read_text().rstrip("\n")
    json.loads(path.read_text())


def test_problem_from_dict_errors():
    with pytest.raises(ValueError, match="missing"):
        problem_from_dict({"n": 1})
    d = problem_to_dict(Problem.example89())
    d["kind"] = "spline"
    with pytest.raises(ValueError, match="unknown potential kind"):
        problem_from_dict(d)
