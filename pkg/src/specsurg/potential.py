"""Matrix potentials, boundary matrices, hypothesis checks and JSON I/O.

A :class:`Problem` bundles a hermitian matrix potential ``V(x)`` on the half
line with boundary matrices ``(A, B)`` describing the selfadjoint condition
``-B^† psi(0) + A^† psi'(0) = 0``.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

EPS_TAIL = 1e-10
HERMITIAN_NODE_TOL = 1e-12
BOUNDARY_TOL = 1e-10
SECOND_MOMENT_WARN = 1e3


# ---------------------------------------------------------------- boundary


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Boundary matrices ``A`` and ``B`` (both ``n x n``)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=complex, ndmin=2)
        B = np.array(self.B, dtype=complex, ndmin=2)
        if A.shape != B.shape or A.shape[0] != A.shape[1]:
            raise ValueError(f"boundary matrices must be square and equal-sized: {A.shape}, {B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @classmethod
    def dirichlet(cls, n: int = 1) -> "BoundaryCondition":
        """``A = 0, B = -I``: psi(0) = 0."""
        return cls(np.zeros((n, n)), -np.eye(n))

    @classmethod
    def neumann(cls, n: int = 1) -> "BoundaryCondition":
        """``A = I, B = 0``: psi'(0) = 0."""
        return cls(np.eye(n), np.zeros((n, n)))

    def selfadjoint_residual(self) -> float:
        """Norm of ``-B^† A + A^† B``."""
        return float(np.linalg.norm(-self.B.conj().T @ self.A + self.A.conj().T @ self.B, 2))

    def min_positivity(self) -> float:
        """Smallest eigenvalue of ``A^† A + B^† B``."""
        M = self.A.conj().T @ self.A + self.B.conj().T @ self.B
        return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])

    def is_legal(self, tol: float = BOUNDARY_TOL) -> bool:
        return self.selfadjoint_residual() <= tol and self.min_positivity() > tol


# ---------------------------------------------------------------- catalog


def _example89(x):
    x = np.asarray(x, dtype=float)
    # -8 e^{2x} / (1 + e^{2x})^2 written with e^{-2x} to avoid overflow
    e = np.exp(-2.0 * x)
    return -8.0 * e / (1.0 + e) ** 2


def _example89_tail(x: float) -> float:
    return 4.0 / (1.0 + math.exp(2.0 * x))


def _example89_added(x):
    """Potential obtained from ``_example89`` by adding the state kappa=1, C=4."""
    x = np.asarray(x, dtype=float)
    # Numerator and denominator are scaled by e^{-6x} so nothing overflows.
    e2 = np.exp(-2.0 * x)
    ch1 = 0.5 * (e2 + e2 * e2)  # cosh(x) e^{-3x}
    sh1 = 0.5 * (e2 - e2 * e2)  # sinh(x) e^{-3x}
    ch2 = 0.5 * (1.0 + e2 * e2)  # cosh(2x) e^{-2x}
    den = (1.0 - 2.0 * x) * ch1 + (1.0 + 4.0 * x**2) * sh1 + ch2 * 0.5 * (1.0 - e2)
    e6 = e2**3
    ch2s = 0.5 * (e2**2 + e2**4)  # cosh(2x) e^{-6x}
    sh2s = 0.5 * (e2**2 - e2**4)
    ch4s = 0.5 * (e2 + e2**5)  # cosh(4x) e^{-6x}
    sh4s = 0.5 * (e2 - e2**5)
    q27 = (7.0 - 24.0 * x + 32.0 * x**4) * e6 + 64.0 * x**2 * ch2s - (16.0 + 32.0 * x) * sh2s
    q28 = -(9.0 + 8.0 * x**2) * ch4s + (-2.0 + 20.0 * x) * sh4s
    return (q27 + q28) / den**2


@dataclass(frozen=True)
class _CatalogEntry:
    evaluate: Callable
    n: int | None  # None: any dimension
    tail: Callable[[float], float] | None = None
    note: str = ""


CATALOG: dict[str, _CatalogEntry] = {
    "free": _CatalogEntry(lambda x: np.zeros_like(np.asarray(x, dtype=float)), None, lambda x: 0.0, "V = 0"),
    "example89": _CatalogEntry(_example89, 1, _example89_tail, "V = -8 e^{2x}/(1+e^{2x})^2 (pairs with Dirichlet)"),
    "example89_added": _CatalogEntry(_example89_added, 1, None, "example89 after adding kappa=1, C=4"),
}


def catalog_names() -> list[str]:
    return list(CATALOG)


# ---------------------------------------------------------------- potential


@dataclass(frozen=True, eq=False)
class Potential:
    """Hermitian matrix potential on ``[0, inf)``.

    Either a named catalog entry with a closed-form evaluator or a sampled
    grid interpolated by monotone cubics (per entry) and set to zero beyond
    ``support_end``.

    Attributes
    ----------
    n : int
        Matrix dimension.
    kind : str
        ``"catalog"`` or ``"grid"``.
    name : str or None
        Catalog key for catalog potentials.
    x : numpy.ndarray or None
        Grid nodes, strictly increasing with ``x[0] = 0``.
    values : numpy.ndarray or None
        Samples of shape ``(len(x), n, n)``.
    support_end : float
        ``V`` is treated as zero beyond this point.
    """

    n: int
    kind: str
    name: str | None = None
    x: np.ndarray | None = None
    values: np.ndarray | None = None
    support_end: float = 0.0
    eps_tail: float = EPS_TAIL
    _interp: tuple = field(default=(), repr=False)

    @classmethod
    def catalog(cls, name: str, n: int = 1, eps_tail: float = EPS_TAIL) -> "Potential":
        if name not in CATALOG:
            raise ValueError(f"unknown catalog potential {name!r}; known: {catalog_names()}")
        entry = CATALOG[name]
        if entry.n is not None and entry.n != n:
            raise ValueError(f"catalog potential {name!r} has dimension {entry.n}, not {n}")
        pot = cls(n=n, kind="catalog", name=name, eps_tail=eps_tail)
        object.__setattr__(pot, "support_end", pot._catalog_x_max())
        return pot

    @classmethod
    def grid(cls, x, values, support_end: float | None = None) -> "Potential":
        x = np.array(x, dtype=float)
        values = np.array(values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None, None]
        if x.ndim != 1 or x.size < 2:
            raise ValueError("grid needs at least two nodes")
        if x[0] != 0.0 or np.any(np.diff(x) <= 0):
            raise ValueError("grid nodes must start at 0 and increase strictly")
        if values.shape[0] != x.size or values.shape[1] != values.shape[2]:
            raise ValueError(f"values shape {values.shape} does not match {x.size} nodes of square matrices")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        scale = max(1.0, float(np.abs(values).max()))
        asym = float(np.abs(values - values.conj().transpose(0, 2, 1)).max()) / scale
        if asym > HERMITIAN_NODE_TOL:
            raise ValueError(f"grid values are not hermitian (max relative asymmetry {asym:.3e})")
        values = 0.5 * (values + values.conj().transpose(0, 2, 1))
        support_end = float(x[-1]) if support_end is None else float(support_end)
        if support_end > x[-1] + 1e-14:
            raise ValueError("support_end beyond last grid node")
        x.setflags(write=False)
        values.setflags(write=False)
        n = values.shape[1]
        flat = values.reshape(x.size, n * n)
        interp = (
            PchipInterpolator(x, flat.real, axis=0, extrapolate=False),
            PchipInterpolator(x, flat.imag, axis=0, extrapolate=False),
        )
        return cls(n=n, kind="grid", x=x, values=values, support_end=support_end, _interp=interp)

    # -- evaluation

    def __call__(self, x) -> np.ndarray:
        """Sample ``V``; scalar ``x`` gives ``(n, n)``, an array gives ``(len, n, n)``."""
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        xa = np.atleast_1d(xa)
        n = self.n
        if self.kind == "catalog":
            if self.name == "free":
                out = np.zeros((xa.size, n, n), dtype=complex)
            else:
                v = CATALOG[self.name].evaluate(xa)
                out = (v[:, None, None] * np.eye(n)).astype(complex)
        else:
            out = np.zeros((xa.size, n, n), dtype=complex)
            inside = (xa >= 0) & (xa <= self.support_end)
            if np.any(inside):
                re, im = self._interp
                xi = xa[inside]
                out[inside] = (re(xi) + 1j * im(xi)).reshape(-1, n, n)
        return out[0] if scalar else out

    sample = __call__

    def stage_evaluator(self) -> Callable[[np.ndarray], np.ndarray]:
        """A fast ``xs -> V(xs)`` of shape ``(len(xs), n, n)`` used inside the integrator.

        For grid potentials all points of one call must lie in a single grid
        interval (the integrator lands on every node, so its stages do).
        """
        n = self.n
        if self.kind == "catalog":
            if self.name == "free":
                return lambda xs: np.zeros((len(xs), n, n), dtype=complex)
            fn = CATALOG[self.name].evaluate
            eye = np.eye(n, dtype=complex)
            return lambda xs: fn(xs)[:, None, None] * eye
        re, im = self._interp
        # Horner evaluation of the per-interval cubics, skipping PPoly's call overhead.
        coef = (re.c + 1j * im.c).reshape(4, -1, n, n)
        knots = self.x.tolist()
        last = len(knots) - 2
        end = self.support_end

        def ev(xs):
            mid = 0.5 * (float(xs[0]) + float(xs[-1]))
            if mid > end or mid < 0:
                return np.zeros((len(xs), n, n), dtype=complex)
            i = min(bisect.bisect_right(knots, mid) - 1, last)
            t = (xs - knots[i])[:, None, None]
            c = coef[:, i]
            out = ((c[0] * t + c[1]) * t + c[2]) * t + c[3]
            out[(xs > end) | (xs < 0)] = 0.0
            return out

        return ev

    @property
    def is_free(self) -> bool:
        return self.kind == "catalog" and self.name == "free"

    # -- integrals

    def norm_profile(self, x) -> np.ndarray:
        """Operator norm ``|V(x)|`` at the given points."""
        vals = self(np.atleast_1d(np.asarray(x, dtype=float)))
        if self.n == 1:
            return np.abs(vals[:, 0, 0])
        return np.linalg.norm(vals, ord=2, axis=(1, 2))

    def _catalog_tail(self, x: float) -> float:
        entry = CATALOG[self.name]
        if entry.tail is not None:
            return float(entry.tail(x))
        val, _ = integrate.quad(lambda y: float(self.norm_profile(y)[0]), x, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
        return float(val)

    def _catalog_x_max(self) -> float:
        if self.name == "free":
            return 0.0
        f = lambda x: self._catalog_tail(x) - self.eps_tail
        hi = 1.0
        while f(hi) > 0:
            hi *= 2.0
        return float(optimize.brentq(f, 0.0, hi, xtol=1e-12))

    @property
    def x_max(self) -> float:
        """End of the interval on which ``V`` is integrated numerically."""
        return float(self.support_end)

    def tail_integral(self, x: float) -> float:
        """``q6(x) = int_x^inf |V(y)| dy`` with the operator norm."""
        x = float(x)
        if x < 0:
            raise ValueError("tail_integral needs x >= 0")
        if self.kind == "catalog":
            return self._catalog_tail(x)
        if x >= self.support_end:
            return 0.0
        nodes = self.x[self.x <= self.support_end]
        inner = nodes[(nodes > x) & (nodes < self.support_end)]
        pts = np.concatenate([[x], inner, [self.support_end]])
        # Composite Simpson on each node interval with a midpoint sample.
        a, b = pts[:-1], pts[1:]
        fa, fb, fm = self.norm_profile(a), self.norm_profile(b), self.norm_profile(0.5 * (a + b))
        return float(np.sum((b - a) * (fa + 4.0 * fm + fb) / 6.0))

    def moments(self) -> dict[str, float]:
        """``int |V|``, ``int (1+x)|V|`` and ``int (1+x)^2 |V|`` over ``[0, x_max]``."""
        end = self.x_max
        if end == 0.0 or self.is_free:
            return {"L1": 0.0, "L1_1": 0.0, "L1_2": 0.0}
        if self.kind == "grid":
            nodes = self.x[self.x <= end]
        else:
            nodes = np.linspace(0.0, end, 4001)
        w = self.norm_profile(nodes)
        out = {}
        for key, p in (("L1", 0), ("L1_1", 1), ("L1_2", 2)):
            out[key] = float(integrate.simpson(w * (1.0 + nodes) ** p, x=nodes))
        return out


# ---------------------------------------------------------------- problem


@dataclass(frozen=True, eq=False)
class Problem:
    """Potential plus boundary condition."""

    potential: Potential
    boundary: BoundaryCondition

    def __post_init__(self):
        if self.potential.n != self.boundary.n:
            raise ValueError(f"potential dimension {self.potential.n} != boundary dimension {self.boundary.n}")

    @property
    def n(self) -> int:
        return self.potential.n

    @property
    def x_max(self) -> float:
        return self.potential.x_max

    @property
    def A(self) -> np.ndarray:
        return self.boundary.A

    @property
    def B(self) -> np.ndarray:
        return self.boundary.B

    @cached_property
    def moments(self) -> dict[str, float]:
        return self.potential.moments()

    @classmethod
    def free(cls, n: int = 1, boundary: str = "dirichlet") -> "Problem":
        bc = BoundaryCondition.dirichlet(n) if boundary == "dirichlet" else BoundaryCondition.neumann(n)
        return cls(Potential.catalog("free", n), bc)

    @classmethod
    def example89(cls) -> "Problem":
        return cls(Potential.catalog("example89"), BoundaryCondition.dirichlet(1))


@dataclass
class Check:
    """One measured quantity against its tolerance."""

    name: str
    measured: float
    tolerance: float
    passed: bool
    anchor: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]
    moments: dict[str, float]
    warnings: list[str]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def validate(problem: Problem) -> ValidationReport:
    """Check hermiticity of ``V`` and the two boundary hypotheses; compute moments."""
    checks = []
    pot = problem.potential
    if pot.kind == "grid":
        vals = pot.values
        asym = float(np.abs(vals - vals.conj().transpose(0, 2, 1)).max())
    else:
        asym = 0.0
    checks.append(Check("potential hermitian", asym, HERMITIAN_NODE_TOL, asym <= HERMITIAN_NODE_TOL, "V = V^dagger"))
    r = problem.boundary.selfadjoint_residual()
    checks.append(Check("-B^dag A + A^dag B = 0", r, BOUNDARY_TOL, r <= BOUNDARY_TOL, "boundary selfadjointness"))
    lam = problem.boundary.min_positivity()
    checks.append(Check("A^dag A + B^dag B > 0", lam, BOUNDARY_TOL, lam > BOUNDARY_TOL, "boundary nondegeneracy"))
    moments = pot.moments()
    finite = all(math.isfinite(v) for v in moments.values())
    checks.append(Check("finite L1_1 moment", moments["L1_1"], math.inf, finite, "integrability"))
    warnings = []
    if moments["L1_2"] > SECOND_MOMENT_WARN:
        warnings.append(f"second moment {moments['L1_2']:.3e} is large; some decay estimates assume it is finite")
    return ValidationReport(checks, moments, warnings)


# ---------------------------------------------------------------- JSON


def format_number(v: float) -> str:
    """Fixed 17-significant-digit rendering (round-trips doubles exactly)."""
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("cannot serialize non-finite number")
    if v == 0.0:
        v = 0.0  # normalize -0.0
    return format(v, ".17g")


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """Deterministic JSON with fixed float formatting."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def matrix_to_json(M) -> list:
    """Row-major list of ``[re, im]`` pairs."""
    M = np.asarray(M, dtype=complex)
    return [[float(z.real), float(z.imag)] for z in M.ravel()]


def matrix_from_json(data, n: int, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.shape != (n * n, 2):
        raise ValueError(f"{name}: expected {n * n} [re, im] pairs, got shape {arr.shape}")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(n, n)


def problem_to_dict(problem: Problem) -> dict:
    pot = problem.potential
    d: dict = {"n": pot.n, "kind": pot.kind}
    if pot.kind == "catalog":
        d["catalog"] = pot.name
        d["x"] = []
        d["V"] = []
    else:
        d["x"] = [float(v) for v in pot.x]
        d["V"] = [matrix_to_json(v) for v in pot.values]
    d["support_end"] = float(pot.support_end)
    d["boundary"] = {"A": matrix_to_json(problem.A), "B": matrix_to_json(problem.B)}
    return d


def problem_from_dict(d: dict) -> Problem:
    try:
        n = int(d["n"])
        kind = d["kind"]
        bd = d["boundary"]
        A = matrix_from_json(bd["A"], n, "boundary.A")
        B = matrix_from_json(bd["B"], n, "boundary.B")
    except KeyError as exc:
        raise ValueError(f"problem file is missing field {exc}") from None
    if kind == "catalog":
        if "catalog" not in d:
            raise ValueError("catalog problem needs a 'catalog' name")
        pot = Potential.catalog(d["catalog"], n)
    elif kind == "grid":
        x = d.get("x")
        V = d.get("V")
        if x is None or V is None:
            raise ValueError("grid problem needs 'x' and 'V'")
        vals = np.array([matrix_from_json(v, n, "V") for v in V])
        pot = Potential.grid(x, vals, d.get("support_end"))
    else:
        raise ValueError(f"unknown potential kind {kind!r}")
    return Problem(pot, BoundaryCondition(A, B))


def save_problem(problem: Problem, path) -> None:
    Path(path).write_text(dumps(problem_to_dict(problem)) + "\n")


def load_problem(path) -> Problem:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return problem_from_dict(data)
