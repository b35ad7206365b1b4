"""Bound-state surgery through closed-form Gel'fand–Levitan transformations.

All four transformations share one structure.  With a matrix solution
``X(x)`` of the unperturbed equation at ``k = i kappa`` and

* removal / multiplicity decrease (``s = +1``): ``X = phi(i kappa, x) C``,
  ``N(x) = int_x^inf X^† X``;
* addition / multiplicity increase (``s = -1``): ``X = phi(i kappa, x) C``,
  ``N(x) = R + int_0^x X^† X`` with ``R`` the range projection of ``C``;

the kernel solving the Gel'fand–Levitan equation is
``A(x, y) = s X(x) N(x)^+ X(y)^†`` and

* ``V~ = V + 2 d/dx A(x, x) = V + 2s (T + T^†) + 2 Y^2`` with
  ``Y = X N^+ X^†`` and ``T = X' N^+ X^†``,
* ``B~ = B + s A C^2 A^† A`` and ``A~ = A``,
* ``J~(k) = F(k) J(k)`` with ``F(k) = I + s 2 i kappa / (k - s i kappa) Pi``.

``N^+`` is the inverse on the fixed range of ``N``.  For removal ``X`` is
built from the decaying form ``f(i kappa, x) K C`` and ``N`` from the tail
integral of ``f^† f``; both stay accurate at large ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import matops
from .potential import BoundaryCondition, Potential, Problem, dumps, matrix_from_json, matrix_to_json, problem_to_dict
from .solver import growing_batch, jost_batch, jost_matrices, regular_batch
from .spectra import BoundState, Spectrum, bound_state, decay_coefficient, decay_data, find_bound_states

GRID_STEP = 0.005
KAPPA_COLLISION = 1e-6
PROJ_TOL = 1e-8
L_COND_LIMIT = 1e10
SINGULAR_SHIFT = 1e-4
REFINE_TOL = 1e-9
GRADE_ROUNDS = 3
GRADE_GROWTH = 0.05
KINDS = ("remove", "decrease", "add", "increase")


class SurgeryError(ValueError):
    """A surgery plan violates a precondition."""


def _hermitian_t(M):
    return np.conj(np.swapaxes(M, -1, -2))


def cumulative_integral(y, x) -> np.ndarray:
    """Cumulative Simpson integral along axis 0, starting at 0 (complex-safe)."""
    y = np.asarray(y)
    out = cumulative_simpson(y.real, x=x, axis=0, initial=0.0)
    if np.iscomplexobj(y):
        out = out + 1j * cumulative_simpson(y.imag, x=x, axis=0, initial=0.0)
    return out


# ---------------------------------------------------------------- plans


@dataclass(frozen=True, eq=False)
class SurgeryPlan:
    """Which transformation to apply and its parameters.

    Attributes
    ----------
    kind : str
        ``"remove"``, ``"decrease"``, ``"add"`` or ``"increase"``.
    kappa : float
        Location ``k = i kappa`` of the affected bound state.
    C : numpy.ndarray, optional
        Normalization matrix of a new state (``add``).
    Q_r : numpy.ndarray, optional
        Sub-projection of the kernel to remove (``decrease``).
    Q_i, G_i : numpy.ndarray, optional
        New kernel directions and their Gram matrix (``increase``).
    """

    kind: str
    kappa: float
    C: np.ndarray | None = None
    Q_r: np.ndarray | None = None
    Q_i: np.ndarray | None = None
    G_i: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SurgeryError(f"plan kind must be one of {KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise SurgeryError("plan kappa must be a positive real")
        for name in ("C", "Q_r", "Q_i", "G_i"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.array(val, dtype=complex, ndmin=2))
        needed = {"add": ("C",), "decrease": ("Q_r",), "increase": ("Q_i", "G_i"), "remove": ()}[self.kind]
        for name in needed:
            if getattr(self, name) is None:
                raise SurgeryError(f"a {self.kind} plan needs {name}")

    @classmethod
    def remove(cls, kappa: float) -> "SurgeryPlan":
        return cls("remove", kappa)

    @classmethod
    def decrease(cls, kappa: float, Q_r) -> "SurgeryPlan":
        return cls("decrease", kappa, Q_r=Q_r)

    @classmethod
    def add(cls, kappa: float, C) -> "SurgeryPlan":
        return cls("add", kappa, C=C)

    @classmethod
    def increase(cls, kappa: float, Q_i, G_i) -> "SurgeryPlan":
        return cls("increase", kappa, Q_i=Q_i, G_i=G_i)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "kappa": float(self.kappa)}
        for name in ("C", "Q_r", "Q_i", "G_i"):
            val = getattr(self, name)
            if val is not None:
                d[name] = matrix_to_json(val)
        return d

    @classmethod
    def from_dict(cls, d: dict, n: int) -> "SurgeryPlan":
        if "kind" not in d or "kappa" not in d:
            raise SurgeryError("plan needs 'kind' and 'kappa'")
        kw = {name: matrix_from_json(d[name], n, name) for name in ("C", "Q_r", "Q_i", "G_i") if name in d}
        return cls(str(d["kind"]), float(d["kappa"]), **kw)


# ---------------------------------------------------------------- factors


@dataclass(frozen=True, eq=False)
class JostFactor:
    """Rational factor ``F(k) = I + sign * 2 i kappa / (k - sign i kappa) * projection``.

    ``sign = +1`` for removal-type surgeries, ``-1`` for addition-type ones.
    The transformed Jost matrix is ``F(k) J(k)`` and the transformed
    scattering matrix ``F(-k) S(k) F(-k)``.
    """

    kappa: float
    sign: int
    projection: np.ndarray

    @property
    def m(self) -> int:
        return int(round(np.trace(self.projection).real))

    def __call__(self, k: complex) -> np.ndarray:
        n = self.projection.shape[0]
        a = self.sign * 2j * self.kappa / (k - self.sign * 1j * self.kappa)
        return np.eye(n) + a * self.projection

    def det(self, k: complex) -> complex:
        """``((k + s i kappa) / (k - s i kappa))^m``."""
        s = self.sign
        return ((k + s * 1j * self.kappa) / (k - s * 1j * self.kappa)) ** self.m

    def jost(self, J, k: complex) -> np.ndarray:
        return self(k) @ J

    def scattering(self, S, k: float) -> np.ndarray:
        F = self(-k)
        return F @ S @ F

    def to_dict(self) -> dict:
        return {"kappa": float(self.kappa), "sign": int(self.sign), "projection": matrix_to_json(self.projection)}


# ---------------------------------------------------------------- result


@dataclass(frozen=True, eq=False)
class SurgeryResult:
    """Transformed problem plus everything needed to evaluate the transformation.

    Attributes
    ----------
    plan : SurgeryPlan
    original : Problem
    problem : Problem
        Transformed problem (grid potential ``V~`` and ``(A, B~)``).
    jost_factor : JostFactor
    xs : numpy.ndarray
        Grid of the transformed potential.
    delta_V : numpy.ndarray
        ``V~ - V`` on ``xs``.
    diagnostics : dict
    """

    plan: SurgeryPlan
    original: Problem
    problem: Problem
    jost_factor: JostFactor
    xs: np.ndarray
    delta_V: np.ndarray
    sign: int
    kappa: float
    X: np.ndarray = field(repr=False)
    dX: np.ndarray = field(repr=False)
    Nplus: np.ndarray = field(repr=False)
    C_used: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def V_tilde(self) -> Potential:
        return self.problem.potential

    @property
    def boundary_tilde(self) -> BoundaryCondition:
        return self.problem.boundary

    # -- kernels

    def kernel_A(self, i: int, j) -> np.ndarray:
        """``A(x_i, x_j)`` on grid indices."""
        return self.sign * self.X[i] @ self.Nplus[i] @ _hermitian_t(self.X[j])

    def kernel_G(self, i, j) -> np.ndarray:
        """Gel'fand–Levitan kernel ``G(x_i, x_j) = -s X(x_i) X(x_j)^†``."""
        return -self.sign * self.X[i] @ _hermitian_t(self.X[j])

    # -- transformed solutions

    def _wronskian_term(self, k, sol, dsol):
        """``(X'^† u - X^† u') / (k^2 + kappa^2)``, whose derivative is ``X^† u``."""
        return (_hermitian_t(self.dX) @ sol - _hermitian_t(self.X) @ dsol) / (k * k + self.kappa**2)

    def _apply(self, sol, dsol, integral):
        s = self.sign
        XN = self.X @ self.Nplus
        Y = XN @ _hermitian_t(self.X)
        val = sol + s * XN @ integral
        der = dsol + s * (self.dX @ self.Nplus @ integral + s * Y @ XN @ integral + Y @ sol)
        return val, der

    def phi_tilde(self, k: complex, method: str = "wronskian"):
        """Transformed regular solution on ``xs``: ``phi + s X N^+ int_0^x X^† phi``.

        ``method="wronskian"`` evaluates the integral in closed form,
        ``"integral"`` by cumulative Simpson quadrature (also valid at ``k = i kappa``).
        Returns ``(phi~, phi~')``.
        """
        k = complex(k)
        phi, dphi, _ = regular_batch(self.original, [k], self.xs)
        phi, dphi = phi[:, 0], dphi[:, 0]
        singular = abs(k * k + self.kappa**2) < 1e-8 * max(1.0, self.kappa**2)
        if method == "integral" or singular:
            integrand = _hermitian_t(self.X) @ phi
            integral = cumulative_integral(integrand, self.xs)
        elif method == "wronskian":
            integral = self._wronskian_term(k, phi, dphi)
        else:
            raise ValueError(f"unknown method {method!r}")
        return self._apply(phi, dphi, integral)

    def f_tilde(self, k: complex, method: str = "wronskian"):
        """Transformed Jost solution on ``xs``.

        ``f~ = [f + s X N^+ w(x)] F(k)`` with ``w' = X^† f`` fixed by decay at
        infinity.  At ``k = i kappa`` the closed form has a removable
        singularity and the mean over ``k = i kappa (1 +- 1e-4)`` is returned.
        ``method="integral"`` uses ``w = -int_x^inf X^† f`` by quadrature
        (removal-type surgeries only).
        """
        k = complex(k)
        if abs(k * k + self.kappa**2) < 1e-8 * max(1.0, self.kappa**2) and method == "wronskian":
            a = self.f_tilde(k * (1 + SINGULAR_SHIFT))
            b = self.f_tilde(k * (1 - SINGULAR_SHIFT))
            return 0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])
        f, df, _ = jost_batch(self.original, [k], self.xs)
        f, df = f[:, 0], df[:, 0]
        if method == "wronskian":
            w = self._wronskian_term(k, f, df)
        elif method == "integral":
            if self.sign != 1:
                raise ValueError("the tail-integral form applies to removal-type surgeries")
            integrand = _hermitian_t(self.X) @ f
            head = cumulative_integral(integrand, self.xs)
            # beyond xs[-1] both X and f are pure exponentials
            tail_end = integrand[-1] / (self.kappa - 1j * k)
            w = -(head[-1] - head + tail_end)
        else:
            raise ValueError(f"unknown method {method!r}")
        val, der = self._apply(f, df, w)
        F = self.jost_factor(k)
        return val @ F, der @ F

    def transformed_jost(self, ks) -> np.ndarray:
        """``F(k) J(k)`` with ``J`` of the original problem."""
        ks = np.atleast_1d(np.asarray(ks, dtype=complex))
        J = jost_matrices(self.original, ks)
        return np.array([self.jost_factor(k) @ Jk for k, Jk in zip(ks, J)])

    def to_dict(self) -> dict:
        d = problem_to_dict(self.problem)
        d["jost_factor"] = self.jost_factor.to_dict()
        d["plan"] = self.plan.to_dict()
        d["diagnostics"] = _jsonable(self.diagnostics)
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return matrix_to_json(obj) if obj.ndim == 2 else [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# ---------------------------------------------------------------- scattering factor


def scattering_factor(result: SurgeryResult):
    """``k -> S~(k)`` built from the original scattering matrix and the factor."""
    from .solver import scattering_matrices

    def evaluate(k):
        S = scattering_matrices(result.original, [float(k)])[0]
        return result.jost_factor.scattering(S, float(k))

    return evaluate


# ---------------------------------------------------------------- helpers


def _check_projection(Q, name: str) -> np.ndarray:
    Q = np.asarray(Q, dtype=complex)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise SurgeryError(f"{name} must be a square matrix")
    if np.linalg.norm(Q - Q.conj().T, 2) > PROJ_TOL or np.linalg.norm(Q @ Q - Q, 2) > PROJ_TOL:
        raise SurgeryError(f"{name} must be an orthogonal projection (Q^2 = Q = Q^dagger)")
    return 0.5 * (Q + Q.conj().T)


def _rank(Q) -> int:
    return int(round(np.trace(Q).real))


def _breaks(problem: Problem, x_end: float) -> list[float]:
    se = problem.x_max
    return [0.0, se, x_end] if 0 < se < x_end else [0.0, x_end]


def output_grid(problem: Problem, x_end: float, h: float = GRID_STEP) -> np.ndarray:
    """Uniform grid of step about ``h`` on ``[0, x_end]`` with ``support_end`` as a node."""
    br = _breaks(problem, x_end)
    pieces = [np.linspace(a, b, max(2, int(math.ceil((b - a) / h)) + 1)) for a, b in zip(br, br[1:])]
    return np.unique(np.concatenate(pieces))


def graded_grid(xs, values, breaks, h: float, tol: float, growth: float = GRADE_GROWTH) -> np.ndarray:
    """Smoothly graded grid on which cubic monotone interpolation of ``values`` meets ``tol``.

    The local step is ``min(h, (tol / |d3 V|)^(1/3))`` with the third
    derivative estimated from ``values`` on ``xs``.  The step may change by
    at most ``growth`` per unit length, since abrupt step changes spoil the
    interpolant's slopes.
    """
    flat = values.reshape(xs.size, -1)
    d3 = np.abs(np.gradient(np.gradient(np.gradient(flat, xs, axis=0), xs, axis=0), xs, axis=0)).max(axis=1)
    # widen by one node each way so a feature between nodes is not missed
    d3 = np.maximum.reduce([d3, np.roll(d3, 1), np.roll(d3, -1)])
    step = np.minimum(h, np.cbrt(tol / np.maximum(d3, 1e-300)))
    step = np.maximum(step, h / 1024)
    for i in range(1, step.size):
        step[i] = min(step[i], step[i - 1] + growth * (xs[i] - xs[i - 1]))
    for i in range(step.size - 2, -1, -1):
        step[i] = min(step[i], step[i + 1] + growth * (xs[i + 1] - xs[i]))
    nodes = []
    for a, b in zip(breaks, breaks[1:]):
        pts = [a]
        while pts[-1] < b:
            pts.append(pts[-1] + float(np.interp(pts[-1], xs, step)))
        pts = np.asarray(pts)
        # drop the overshooting node if it lies closer to b than half a step
        if pts.size > 2 and pts[-1] - b > 0.5 * (pts[-1] - pts[-2]):
            pts = pts[:-1]
        pts = a + (pts - a) * (b - a) / (pts[-1] - a)
        pts[-1] = b
        nodes.append(pts)
    return np.unique(np.concatenate(nodes))


def addition_extent(problem: Problem, kappa: float, eps: float) -> float:
    """Grid end for addition-type surgeries: beyond it ``|V~ - V|`` is below ``eps``.

    Uses the bound ``8 kappa^2 (1 + kappa x)^2 e^{-2 kappa x}`` for the tail of
    ``V~ - V``, which covers decay up to ``x^2 e^{-2 kappa x}``.
    """
    g = lambda x: 8 * kappa**2 * (1 + kappa * x) ** 2 * math.exp(-2 * kappa * x) - eps
    x = 1.0 / kappa
    while g(x) > 0:
        x *= 1.25
    return max(problem.x_max, x)


def growing_coefficient(problem: Problem, kappa: float) -> tuple[np.ndarray, float]:
    """``L`` in ``phi(i kappa, x) = f(i kappa, x) K + g(i kappa, x) L``.

    The block system ``[f g; f' g'] [K; L] = [phi; phi']`` is solved at
    ``x_max``, using scaled columns ``e^{kappa x} f`` and ``e^{-kappa x} g``.
    Returns ``L`` and the condition number of the scaled system.
    """
    xm = problem.x_max
    n = problem.n
    f, df, _ = jost_batch(problem, [1j * kappa], [xm])
    g, dg = growing_batch(problem, [kappa], [xm])
    phi, dphi, _ = regular_batch(problem, [1j * kappa], [xm])
    ef, eg = math.exp(kappa * xm), math.exp(-kappa * xm)
    top = np.hstack([f[0, 0] * ef, g[0, 0] * eg])
    bot = np.hstack([df[0, 0] * ef, dg[0, 0] * eg])
    sysm = np.vstack([top, bot])
    cond = float(np.linalg.cond(sysm))
    rhs = np.vstack([phi[0, 0], dphi[0, 0]])
    sol = np.linalg.solve(sysm, rhs)
    L = sol[n:] * eg
    return L, cond


# ---------------------------------------------------------------- engine


def _delta_v(X, dX, Nplus, sign):
    """``2 s (T + T^†) + 2 Y^2`` with ``Y = X N^+ X^†`` and ``T = X' N^+ X^†``."""
    XN = X @ Nplus
    Y = XN @ _hermitian_t(X)
    T = dX @ Nplus @ _hermitian_t(X)
    dV = 2 * sign * (T + _hermitian_t(T)) + 2 * Y @ Y
    return 0.5 * (dV + _hermitian_t(dV))


def _graded_surgery(problem: Problem, evaluate, x_end: float, h: float, sign: int, tol: float = REFINE_TOL,
                    rounds: int = GRADE_ROUNDS):
    """Evaluate the surgery on a grid graded to the features of ``V~``.

    ``evaluate(xs) -> (X, X', N^+)``.  Starts from a uniform grid of step
    ``h`` and regrades until the grid stops changing materially.  Returns
    the grid, the three arrays on it and ``dV``.
    """
    br = _breaks(problem, x_end)
    xs = output_grid(problem, x_end, h)
    X, dX, Np = evaluate(xs)
    dV = _delta_v(X, dX, Np, sign)
    for _ in range(rounds):
        Vt = problem.potential(xs) + dV
        scale = max(1.0, float(np.abs(Vt).max()))
        new = graded_grid(xs, Vt, br, h, tol * scale)
        settled = new.size <= 1.1 * xs.size and np.diff(new).min() >= 0.7 * np.diff(xs).min()
        if new.size == xs.size and np.all(new == xs):
            break
        xs = new
        X, dX, Np = evaluate(xs)
        dV = _delta_v(X, dX, Np, sign)
        if settled:
            break
    return xs, X, dX, Np, dV


def _finish(plan, problem, xs, X, dX, Nplus, dV, sign, kappa, C_used, boundary, factor, support_end, diagnostics):
    V_new = problem.potential(xs) + dV
    pot = Potential.grid(xs, V_new, support_end)
    new_problem = Problem(pot, boundary)
    diagnostics = dict(diagnostics)
    diagnostics["grid_nodes"] = int(xs.size)
    diagnostics["boundary_selfadjoint_residual"] = boundary.selfadjoint_residual()
    diagnostics["boundary_min_positivity"] = boundary.min_positivity()
    return SurgeryResult(plan, problem, new_problem, factor, xs, dV, sign, kappa, X, dX, Nplus, C_used, diagnostics)


def _removal_type(problem: Problem, plan: SurgeryPlan, state: BoundState, Qsub, h: float) -> SurgeryResult:
    kappa = state.kappa
    n = problem.n
    dd = decay_data(problem, kappa)
    K, match = decay_coefficient(problem, dd, state.Q)
    if Qsub is None:
        Qsub = state.Q
        C = state.C
        Pi = state.P
    else:
        G = matops.hermitize(Qsub @ K.conj().T @ dd.F0 @ K @ Qsub, "G_r")
        H = np.eye(n) - Qsub + G
        C = matops.hermitize(matops.inv_sqrt_pos(H) @ Qsub, "C_r")
        Pi = matops.range_projection(K @ Qsub, tol=1e-8 * max(1.0, np.linalg.norm(K, 2)))
    if problem.potential.kind == "grid":
        x_end = problem.potential.x[-1]
        support_end = problem.potential.support_end
    else:
        x_end = max(problem.x_max, 1.0)
        support_end = problem.x_max if problem.x_max > 0 else x_end
    KC = K @ C

    def evaluate(xs):
        f, df, F = jost_batch(problem, [1j * kappa], xs, gram=True)
        W = _hermitian_t(KC) @ F[:, 0] @ KC
        scale = np.exp(2 * kappa * xs)[:, None, None]
        return f[:, 0] @ KC, df[:, 0] @ KC, matops.restricted_inverse(W * scale, Qsub) * scale

    xs, X, dX, Nplus, dV = _graded_surgery(problem, evaluate, x_end, h, +1)
    # N(0) should reproduce the projection itself (orthonormality of X)
    w0 = float(np.linalg.norm(matops.pinv(Nplus[0]) - Qsub, 2))
    A = problem.A
    B_new = problem.B + A @ C @ C @ A.conj().T @ A
    boundary = BoundaryCondition(A, B_new)
    factor = JostFactor(kappa, +1, Pi)
    diag = {"kind": plan.kind, "kappa": kappa, "rank": _rank(Qsub), "decay_match_residual": match, "N0_minus_Q": w0}
    return _finish(plan, problem, xs, X, dX, Nplus, dV, +1, kappa, C, boundary, factor, support_end, diag)


def _addition_type(problem: Problem, plan: SurgeryPlan, kappa: float, C, R, h: float, eps_tail: float) -> SurgeryResult:
    x_end = addition_extent(problem, kappa, eps_tail)

    def evaluate(xs):
        phi, dphi, Gphi = regular_batch(problem, [1j * kappa], xs, gram=True)
        scale = np.exp(-2 * kappa * xs)[:, None, None]
        Omega_scaled = R * scale + C @ Gphi[:, 0] @ C * scale
        return phi[:, 0] @ C, dphi[:, 0] @ C, matops.restricted_inverse(Omega_scaled, R) * scale

    xs, X, dX, Nplus, dV = _graded_surgery(problem, evaluate, x_end, h, -1)
    L, cond = growing_coefficient(problem, kappa)
    if cond > L_COND_LIMIT:
        raise np.linalg.LinAlgError(f"growing-coefficient extraction is ill-conditioned (cond {cond:.3e})")
    LC = L @ C
    Pi = LC @ matops.pinv(LC.conj().T @ LC) @ LC.conj().T
    Pi = 0.5 * (Pi + Pi.conj().T)
    A = problem.A
    B_new = problem.B - A @ C @ C @ A.conj().T @ A
    boundary = BoundaryCondition(A, B_new)
    factor = JostFactor(kappa, -1, Pi)
    diag = {"kind": plan.kind, "kappa": kappa, "rank": _rank(R), "L_condition": cond}
    return _finish(plan, problem, xs, X, dX, Nplus, dV, -1, kappa, C, boundary, factor, x_end, diag)


def _locate(spectrum: Spectrum, kappa: float) -> BoundState:
    state = spectrum.nearest(kappa)
    if state is None or abs(state.kappa - kappa) > KAPPA_COLLISION * max(1.0, kappa) * 100:
        raise SurgeryError(f"no bound state at kappa = {kappa}; known kappas: {spectrum.kappas}")
    return state


def _spectrum(problem, spectrum):
    return find_bound_states(problem) if spectrum is None else spectrum


def solve_gl_remove(problem: Problem, state: BoundState, h: float = GRID_STEP, plan: SurgeryPlan | None = None) -> SurgeryResult:
    """Remove the bound state ``state`` entirely."""
    plan = SurgeryPlan.remove(state.kappa) if plan is None else plan
    return _removal_type(problem, plan, state, None, h)


def solve_gl_decrease(problem: Problem, state: BoundState, Q_r, h: float = GRID_STEP, plan: SurgeryPlan | None = None) -> SurgeryResult:
    """Remove the kernel directions ``Q_r`` from a bound state (``Q_r = Q`` removes it)."""
    Q_r = _check_projection(Q_r, "Q_r")
    if np.linalg.norm(state.Q @ Q_r - Q_r, 2) > 1e-6:
        raise SurgeryError("Q_r must satisfy Q_N Q_r = Q_r (sub-projection of the bound-state kernel)")
    r = _rank(Q_r)
    if not 1 <= r <= state.m:
        raise SurgeryError(f"rank of Q_r must lie in [1, {state.m}], got {r}")
    plan = SurgeryPlan.decrease(state.kappa, Q_r) if plan is None else plan
    return _removal_type(problem, plan, state, Q_r, h)


def split_normalization(C) -> tuple[np.ndarray, np.ndarray]:
    """Range projection ``R`` of a hermitian ``C >= 0`` and ``G = (C|_R)^{-2}``."""
    C = matops.hermitize(C, "C")
    w, U = np.linalg.eigh(C)
    scale = max(abs(w).max(), 1e-300)
    if w[0] < -1e-10 * scale:
        raise SurgeryError("C must be positive semidefinite")
    keep = w > 1e-10 * scale
    if not np.any(keep):
        raise SurgeryError("C must have rank >= 1")
    Uk = U[:, keep]
    R = Uk @ Uk.conj().T
    G = (Uk / w[keep] ** 2) @ Uk.conj().T
    return 0.5 * (R + R.conj().T), 0.5 * (G + G.conj().T)


def solve_gl_add(problem: Problem, kappa_new: float, C_new, spectrum: Spectrum | None = None,
                 h: float = GRID_STEP, eps_tail: float | None = None, plan: SurgeryPlan | None = None) -> SurgeryResult:
    """Add a bound state at ``k = i kappa_new`` with normalization ``C_new``."""
    kappa_new = float(kappa_new)
    C_new = np.array(C_new, dtype=complex, ndmin=2)
    if C_new.shape != (problem.n, problem.n):
        raise SurgeryError(f"C must be {problem.n}x{problem.n}")
    try:
        R, _ = split_normalization(C_new)
    except ValueError as exc:
        raise SurgeryError(str(exc)) from None
    spectrum = _spectrum(problem, spectrum)
    for kj in spectrum.kappas:
        if abs(kj - kappa_new) <= KAPPA_COLLISION * max(1.0, kj):
            raise SurgeryError(f"kappa_new = {kappa_new} must be distinct from κ_j (existing bound state at {kj:.12g})")
    C = matops.hermitize(C_new, "C")
    plan = SurgeryPlan.add(kappa_new, C) if plan is None else plan
    eps = problem.potential.eps_tail if eps_tail is None else eps_tail
    return _addition_type(problem, plan, kappa_new, C, R, h, eps)


def solve_gl_increase(problem: Problem, state: BoundState, Q_i, G_i, h: float = GRID_STEP,
                      eps_tail: float | None = None, plan: SurgeryPlan | None = None) -> SurgeryResult:
    """Add the kernel directions ``Q_i`` (orthogonal to ``Q``) to an existing state."""
    n = problem.n
    if n < 2:
        raise SurgeryError("increasing a multiplicity needs n >= 2")
    Q_i = _check_projection(Q_i, "Q_i")
    if _rank(Q_i) < 1:
        raise SurgeryError("Q_i must have rank >= 1")
    if np.linalg.norm(Q_i @ state.Q, 2) > 1e-6:
        raise SurgeryError("Q_i must be orthogonal to the existing kernel projection (Q_i Q_N = 0)")
    G_i = np.array(G_i, dtype=complex, ndmin=2)
    try:
        G_i = matops.hermitize(G_i, "G_i")
    except ValueError as exc:
        raise SurgeryError(str(exc)) from None
    if np.linalg.norm(G_i @ Q_i - G_i, 2) > 1e-8 or np.linalg.norm(Q_i @ G_i - G_i, 2) > 1e-8:
        raise SurgeryError("G_i must satisfy G_i Q_i = Q_i G_i = G_i")
    basis = matops.projection_basis(Q_i)
    g = np.linalg.eigvalsh(basis.conj().T @ G_i @ basis)
    if g[0] <= 1e-12 * max(1.0, g[-1]):
        raise SurgeryError("G_i restricted to the range of Q_i must be positive definite")
    H = np.eye(n) - Q_i + G_i
    C = matops.hermitize(matops.inv_sqrt_pos(H) @ Q_i, "C_i")
    plan = SurgeryPlan.increase(state.kappa, Q_i, G_i) if plan is None else plan
    eps = problem.potential.eps_tail if eps_tail is None else eps_tail
    return _addition_type(problem, plan, state.kappa, C, Q_i, h, eps)


def apply_plan(problem: Problem, plan: SurgeryPlan, spectrum: Spectrum | None = None, h: float = GRID_STEP) -> SurgeryResult:
    """Validate ``plan`` against ``problem`` and run the matching surgery."""
    if plan.kind == "add":
        return solve_gl_add(problem, plan.kappa, plan.C, spectrum, h=h, plan=plan)
    spectrum = _spectrum(problem, spectrum)
    state = _locate(spectrum, plan.kappa)
    if plan.kind == "remove":
        return solve_gl_remove(problem, state, h=h, plan=plan)
    if plan.kind == "decrease":
        return solve_gl_decrease(problem, state, plan.Q_r, h=h, plan=plan)
    return solve_gl_increase(problem, state, plan.Q_i, plan.G_i, h=h, plan=plan)


# ---------------------------------------------------------------- kernel and residual


def gl_kernel(problem: Problem, plan: SurgeryPlan, state: BoundState | None = None):
    """``(x, y) -> G(x, y) = -s phi(i kappa, x) C^2 phi(i kappa, y)^†``.

    For removal-type plans ``C`` is the state's (or sub-state's) normalization;
    for additions it is the plan's ``C`` (``increase`` uses ``C_i``).
    """
    kappa = plan.kappa
    n = problem.n
    if plan.kind == "add":
        C, sign = matops.hermitize(plan.C, "C"), -1
    else:
        state = bound_state(problem, kappa) if state is None else state
        if plan.kind == "remove":
            C, sign = state.C, +1
        elif plan.kind == "decrease":
            Q_r = _check_projection(plan.Q_r, "Q_r")
            dd = decay_data(problem, kappa)
            K, _ = decay_coefficient(problem, dd, state.Q)
            G = matops.hermitize(Q_r @ K.conj().T @ dd.F0 @ K @ Q_r, "G_r")
            C, sign = matops.inv_sqrt_pos(np.eye(n) - Q_r + G) @ Q_r, +1
        else:
            C, sign = matops.inv_sqrt_pos(np.eye(n) - plan.Q_i + plan.G_i) @ plan.Q_i, -1
    C2 = C @ C

    def G(x: float, y: float) -> np.ndarray:
        pts = np.unique([float(x), float(y)])
        phi, _, _ = regular_batch(problem, [1j * kappa], pts)
        px = phi[np.searchsorted(pts, x), 0]
        py = phi[np.searchsorted(pts, y), 0]
        return -sign * px @ C2 @ py.conj().T

    return G


def gl_residual(result: SurgeryResult, nx: int = 30, ny: int = 30, x_window: float | None = None) -> float:
    """Max over sampled ``y < x`` of the Gel'fand–Levitan equation residual.

    ``|A(x,y) + G(x,y) + int_0^x A(x,z) G(z,y) dz| / (1 + |G(x,y)|)`` with the
    ``z``-integral taken by Simpson quadrature on the result grid.
    """
    xs = result.xs
    if x_window is None:
        x_window = min(xs[-1], 4.0 / result.kappa)
    idx = np.unique(np.linspace(2, np.searchsorted(xs, x_window), nx).astype(int))
    X = result.X
    XhX = _hermitian_t(X) @ X
    worst = 0.0
    for i in idx:
        inner = simpson(XhX[: i + 1], x=xs[: i + 1], axis=0)
        js = np.unique(np.linspace(0, i - 1, ny).astype(int))
        for j in js:
            A_xy = result.kernel_A(i, j)
            G_xy = result.kernel_G(i, j)
            # int_0^x A(x,z) G(z,y) dz = s X N^+ (int X^† (-s) X) X(y)^† = -X N^+ inner X(y)^†
            conv = -X[i] @ result.Nplus[i] @ inner @ _hermitian_t(X[j])
            r = np.linalg.norm(A_xy + G_xy + conv, 2) / (1.0 + np.linalg.norm(G_xy, 2))
            worst = max(worst, float(r))
    return worst


# ---------------------------------------------------------------- decay fit


@dataclass(frozen=True)
class DecayFit:
    """Best power-times-exponential model for the tail of ``V~ - V``.

    Attributes
    ----------
    model : str
        ``"e"``, ``"xe"`` or ``"x2e"`` for ``x^p e^{-2 kappa x}``, ``p = 0, 1, 2``.
    constant : float
        Fitted signed prefactor of the best model.
    slope_diag : float
        Unconstrained power ``p`` from fitting ``log|dV| + 2 kappa x = p log x + c``.
    diverges : bool
        ``|dV| e^{2 kappa x}`` grows monotonically on the window.
    residuals : dict
        Least-squares residual norm per model.
    window : tuple
    """

    model: str
    constant: float
    slope_diag: float
    diverges: bool
    residuals: dict
    window: tuple


def decay_fit(xs, V, V_tilde, kappa: float, window: tuple[float, float] | None = None) -> DecayFit:
    """Fit ``log|V~ - V|`` on a tail window against ``p log x - 2 kappa x + c``."""
    xs = np.asarray(xs, dtype=float)
    dV = np.asarray(V_tilde) - np.asarray(V)
    if dV.ndim == 3:
        mag = np.linalg.norm(dV, ord=2, axis=(1, 2))
        sgn = np.sign(np.real(np.trace(dV, axis1=1, axis2=2)))
    else:
        mag = np.abs(dV)
        sgn = np.sign(np.real(dV))
    if window is None:
        window = (6.0 / kappa, 10.0 / kappa)
    sel = (xs >= window[0]) & (xs <= window[1])
    if sel.sum() < 3 or np.any(mag[sel] <= 0):
        raise ValueError("tail window is numerically zero or too short")
    x = xs[sel]
    y = np.log(mag[sel]) + 2 * kappa * x
    residuals = {}
    consts = {}
    for name, p in (("e", 0), ("xe", 1), ("x2e", 2)):
        c = float(np.mean(y - p * np.log(x)))
        residuals[name] = float(np.linalg.norm(y - p * np.log(x) - c))
        consts[name] = c
    best = min(residuals, key=residuals.get)
    slope = float(np.polyfit(np.log(x), y, 1)[0])
    scaled = mag[sel] * np.exp(2 * kappa * x)
    diverges = bool(np.all(np.diff(scaled) > 0))
    sign = float(np.sign(np.sum(sgn[sel]))) or 1.0
    return DecayFit(best, sign * math.exp(consts[best]), slope, diverges, residuals, tuple(window))
