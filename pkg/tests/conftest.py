import numpy as np
import pytest

from specsurg.potential import BoundaryCondition, Potential, Problem

_CRITERIA: dict[int, tuple[bool, str]] = {}


def compact_problem(x_end: float = 4.0, nodes: int = 801) -> Problem:
    """n = 2 grid potential vanishing beyond 4, with a mixed boundary condition."""
    x = np.linspace(0.0, x_end, nodes)
    v = np.where(x <= 4.0, np.sin(np.pi * x / 4.0) ** 2, 0.0)
    V = -v[:, None, None] * np.array([[2.0, 0.5], [0.5, 1.5]])
    return Problem(Potential.grid(x, V), BoundaryCondition(np.diag([1.0, 0.0]), np.diag([0.3, -1.0])))


@pytest.fixture(scope="session")
def compact():
    return compact_problem()


@pytest.fixture(scope="session")
def example89():
    return Problem.example89()


@pytest.fixture
def criterion():
    """Record one acceptance criterion; the summary prints after the run."""

    def record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
