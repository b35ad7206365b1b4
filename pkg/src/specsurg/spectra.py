"""Bound states: location, multiplicity, projections, normalizations, dependency matrix.

A bound state sits at ``k = i kappa`` where ``J(i kappa)`` is rank deficient.
Restricted to ``Ker J(i kappa)`` the regular solution decays, so it is
written as ``phi(i kappa, x) Q = f(i kappa, x) K``; the coefficient ``K``
comes from matching ``[f; f'](0) K = [A; B] Q`` and makes every
normalization integral a tail integral of ``f^† f``, which the integrator
carries along at full accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matops
from .potential import Problem, dumps, matrix_to_json
from .solver import jost_batch, regular_batch

KAPPA_MIN = 1e-4
SCAN_POINTS = 200
KAPPA_XTOL = 1e-10
ZERO_SV_REL = 1e-7
COMMUTE_TOL = 1e-9
COND_LIMIT = 1e8


@dataclass(frozen=True, eq=False)
class BoundState:
    """All data attached to one bound state ``k = i kappa``.

    Attributes
    ----------
    kappa : float
    m : int
        Multiplicity, ``dim Ker J(i kappa)``.
    Q, P : numpy.ndarray
        Projections onto ``Ker J(i kappa)`` and ``Ker J(i kappa)^†``.
    C, H : numpy.ndarray
        Gel'fand–Levitan normalization ``C = H^{-1/2} Q``.
    M, Bj : numpy.ndarray
        Marchenko normalization ``M = Bj^{-1/2} P``.
    D : numpy.ndarray
        Dependency matrix, ``phi C = f M D``.
    K : numpy.ndarray
        Decay coefficient, ``phi(i kappa, x) Q = f(i kappa, x) K``.
    """

    kappa: float
    m: int
    Q: np.ndarray
    P: np.ndarray
    C: np.ndarray
    H: np.ndarray
    M: np.ndarray
    Bj: np.ndarray
    D: np.ndarray
    K: np.ndarray
    singular_values: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "kappa": float(self.kappa),
            "m": int(self.m),
            **{name: matrix_to_json(getattr(self, name)) for name in ("Q", "P", "C", "M", "D")},
        }


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Bound states ordered by increasing ``kappa``."""

    states: list[BoundState]
    kappa_max: float
    warnings: list[str] = field(default_factory=list)

    @property
    def kappas(self) -> list[float]:
        return [s.kappa for s in self.states]

    def total_multiplicity(self) -> int:
        return sum(s.m for s in self.states)

    def nearest(self, kappa: float) -> BoundState | None:
        if not self.states:
            return None
        return min(self.states, key=lambda s: abs(s.kappa - kappa))

    def to_dict(self) -> dict:
        return {"kappa_max": float(self.kappa_max), "states": [s.to_dict() for s in self.states], "warnings": list(self.warnings)}

    def to_json(self) -> str:
        return dumps(self.to_dict())


# ---------------------------------------------------------------- building blocks


def jost_on_imaginary_axis(problem: Problem, kappas) -> np.ndarray:
    """``J(i kappa)`` for ``kappa > 0`` (a single Jost solve each since ``-k* = k``)."""
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    f0, df0, _ = jost_batch(problem, 1j * kappas, [0.0])
    fh = np.conj(np.swapaxes(f0[0], -1, -2))
    dfh = np.conj(np.swapaxes(df0[0], -1, -2))
    return fh @ problem.B - dfh @ problem.A


def default_kappa_max(problem: Problem) -> float:
    """Search bound ``1 + int|V|`` widened by the Robin strength of the boundary."""
    robin = float(np.linalg.norm(problem.B @ matops.pinv(problem.A), 2)) if np.any(problem.A) else 0.0
    return 1.0 + problem.moments["L1"] + robin


def _tolerance_from(J_nearby) -> float:
    smax = float(np.linalg.svd(J_nearby, compute_uv=False)[:, 0].max())
    return ZERO_SV_REL * max(smax, 1e-300)


def _near(kappa: float) -> np.ndarray:
    return np.array([kappa, kappa * 0.95, kappa * 1.05])


def zero_tolerance(problem: Problem, kappa: float) -> float:
    """Threshold below which a singular value of ``J(i kappa)`` counts as zero.

    Relative to the size of ``J`` slightly off ``kappa``, since at a simple
    zero with ``n = 1`` the value at ``kappa`` itself carries no scale.
    """
    return _tolerance_from(jost_on_imaginary_axis(problem, _near(kappa)))


@dataclass(frozen=True, eq=False)
class DecayData:
    """``f``, ``f'`` and the tail integral at ``x = 0`` for one ``kappa``."""

    kappa: float
    f0: np.ndarray
    df0: np.ndarray
    F0: np.ndarray  # int_0^inf f^† f


def decay_data(problem: Problem, kappa: float) -> DecayData:
    f, df, F = jost_batch(problem, [1j * kappa], [0.0], gram=True)
    return DecayData(kappa, f[0, 0], df[0, 0], F[0, 0])


def decay_coefficient(problem: Problem, dd: DecayData, Q) -> tuple[np.ndarray, float]:
    """``K`` with ``phi(i kappa, x) Q = f(i kappa, x) K`` and the matching residual."""
    Q = np.asarray(Q, dtype=complex)
    lhs = np.vstack([dd.f0, dd.df0])
    rhs = np.vstack([problem.A @ Q, problem.B @ Q])
    K, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    K = K @ Q
    resid = float(np.linalg.norm(lhs @ K - rhs, 2) / max(1.0, np.linalg.norm(rhs, 2)))
    return K, resid


# ---------------------------------------------------------------- normalizations


def gl_normalization(problem: Problem, kappa: float, Q, dd: DecayData | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gel'fand–Levitan normalization ``C = H^{-1/2} Q`` and ``H = I - Q + G``.

    ``G = int_0^inf Q phi^† phi Q dx`` is evaluated as ``K^† (int f^† f) K``.
    """
    Q = matops.hermitize(Q, "Q")
    n = Q.shape[0]
    if not np.any(np.abs(Q) > 1e-14):
        return np.zeros((n, n), dtype=complex), np.eye(n, dtype=complex)
    dd = decay_data(problem, kappa) if dd is None else dd
    K, _ = decay_coefficient(problem, dd, Q)
    G = matops.hermitize(K.conj().T @ dd.F0 @ K, "G")
    H = np.eye(n) - Q + G
    comm = float(np.linalg.norm(H @ Q - Q @ H, 2))
    if comm > COMMUTE_TOL * max(1.0, np.linalg.norm(H, 2)):
        raise ValueError(f"H does not commute with Q (residual {comm:.3e}); Q is not a kernel projection at this kappa")
    try:
        C = matops.inv_sqrt_pos(H) @ Q
    except ValueError as exc:
        raise ValueError(f"H is not positive: {exc}") from None
    return matops.hermitize(C, "C"), H


def marchenko_normalization(problem: Problem, kappa: float, P, dd: DecayData | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Marchenko normalization ``M = Bj^{-1/2} P`` with ``Bj = I - P + P (int f^† f) P``."""
    P = matops.hermitize(P, "P")
    n = P.shape[0]
    if not np.any(np.abs(P) > 1e-14):
        return np.zeros((n, n), dtype=complex), np.eye(n, dtype=complex)
    dd = decay_data(problem, kappa) if dd is None else dd
    Aj = matops.hermitize(P @ dd.F0 @ P, "A_j")
    Bj = np.eye(n) - P + Aj
    try:
        M = matops.inv_sqrt_pos(Bj) @ P
    except ValueError as exc:
        raise ValueError(f"B_j is not positive: {exc}") from None
    return matops.hermitize(M, "M"), Bj


def _candidates(problem: Problem, kappa: float) -> np.ndarray:
    reach = min(problem.x_max, 4.0 / kappa) if problem.x_max > 0 else 0.0
    return np.linspace(0.0, reach, 41) if reach > 0 else np.array([0.0])


def dependency_matrix(problem: Problem, kappa: float, C, M, candidates=None, jost=None) -> tuple[np.ndarray, dict]:
    """``D = M^+ f(i kappa, x0)^{-1} Phi(x0)`` with ``Phi = phi(i kappa, .) C``.

    ``x0`` is the first candidate where ``e^{kappa x} f(i kappa, x)`` (which
    tends to ``I``) has smallest singular value at least ``0.1``, otherwise
    the best candidate.  The regular solution is integrated forward only up
    to ``x0``, where it is still accurate.  If ``f`` is numerically singular
    at every candidate the derivative form ``M^+ f'(x0)^{-1} Phi'(x0)`` is used.

    ``jost`` may supply ``(f, f')`` already sampled at ``candidates``.
    """
    candidates = _candidates(problem, kappa) if candidates is None else candidates
    candidates = np.unique(np.asarray(candidates, dtype=float))
    if jost is None:
        f, df, _ = jost_batch(problem, [1j * kappa], candidates)
        f, df = f[:, 0], df[:, 0]
    else:
        f, df = jost
    phi, dphi, _ = regular_batch(problem, [1j * kappa], candidates)
    phi, dphi = phi[:, 0], dphi[:, 0]
    grow = np.exp(kappa * candidates)
    quality = np.linalg.svd(f, compute_uv=False)[:, -1] * grow
    dquality = np.linalg.svd(df, compute_uv=False)[:, -1] * grow / kappa
    Mp = matops.pinv(M)
    for q, vals, ders, form in ((quality, f, phi, "f"), (dquality, df, dphi, "f'")):
        ok = np.nonzero(q >= 0.1)[0]
        i = int(ok[0]) if ok.size else int(np.argmax(q))
        if q[i] >= 1.0 / COND_LIMIT:
            D = Mp @ np.linalg.solve(vals[i], ders[i] @ C)
            return D, {"x0": float(candidates[i]), "form": form, "quality": float(q[i])}
    raise np.linalg.LinAlgError("f and f' are numerically singular at every candidate point")


def bound_state(problem: Problem, kappa: float, Q=None, P=None) -> BoundState:
    """Assemble the full bound-state record at a known ``kappa``."""
    candidates = _candidates(problem, kappa)
    # one batch: kappa with its tail integral at the candidates, plus the two
    # neighbours that set the zero tolerance
    f, df, F = jost_batch(problem, 1j * _near(kappa), candidates, gram=True)
    fh = np.conj(np.swapaxes(f[0], -1, -2))
    dfh = np.conj(np.swapaxes(df[0], -1, -2))
    Js = fh @ problem.B - dfh @ problem.A
    J = Js[0]
    tol = _tolerance_from(Js)
    sv = np.linalg.svd(J, compute_uv=False)
    if Q is None:
        Q, _ = matops.kernel_projection(J, tol)
    if P is None:
        P, _ = matops.kernel_projection(J.conj().T, tol)
    m = int(round(np.trace(Q).real))
    dd = DecayData(float(kappa), f[0, 0], df[0, 0], F[0, 0])
    K, _ = decay_coefficient(problem, dd, Q)
    C, H = gl_normalization(problem, kappa, Q, dd)
    M, Bj = marchenko_normalization(problem, kappa, P, dd)
    D, _ = dependency_matrix(problem, kappa, C, M, candidates, jost=(f[:, 0], df[:, 0]))
    return BoundState(float(kappa), m, Q, P, C, H, M, Bj, D, K, sv)


# ---------------------------------------------------------------- search


def _sigma_min(problem: Problem, kappas) -> tuple[np.ndarray, np.ndarray]:
    J = jost_on_imaginary_axis(problem, kappas)
    sv = np.linalg.svd(J, compute_uv=False)
    return sv[:, -1], sv[:, 0]


def _refine(problem: Problem, lo: float, hi: float, xtol: float) -> float:
    """Locate the minimum of ``sigma_min(J(i kappa))`` inside ``[lo, hi]``.

    Near a zero ``sigma_min^2`` is a parabola in ``kappa``, so each round fits
    one through the three lowest samples and zooms onto its vertex.  The
    window keeps its width whenever the minimum sits on an edge.  Stops once
    two successive vertices agree within ``xtol``; if that never happens the
    lowest sample seen is returned.
    """
    prev = None
    best = (np.inf, 0.5 * (lo + hi))
    for _ in range(40):
        pts = np.linspace(lo, hi, 7)
        smin, _ = _sigma_min(problem, pts)
        i = int(np.argmin(smin))
        best = min(best, (float(smin[i]), float(pts[i])))
        width = hi - lo
        if width <= xtol:
            return float(pts[i])
        if i in (0, 6):
            lo, hi = pts[i] - 0.5 * width, pts[i] + 0.5 * width
            if lo <= 0:
                lo, hi = 0.5 * pts[0], pts[0] + width
            continue
        x3, y3 = pts[i - 1 : i + 2], smin[i - 1 : i + 2] ** 2
        h = x3[1] - x3[0]
        curv = y3[0] - 2 * y3[1] + y3[2]
        v = x3[1] + 0.5 * h * (y3[0] - y3[2]) / curv if curv > 0 else x3[1]
        v = min(max(v, x3[0]), x3[2])
        if prev is not None and abs(v - prev) <= xtol:
            return float(v)
        prev = v
        half = max(min(1e-3 * width, h), 0.5 * xtol)
        lo, hi = v - half, v + half
    # sigma_min is noisy at this scale; keep the lowest sample seen
    return best[1]


def find_bound_states(problem: Problem, kappa_max: float | None = None, scan_points: int = SCAN_POINTS,
                      kappa_min: float = KAPPA_MIN) -> Spectrum:
    """Scan ``sigma_min(J(i kappa))`` on a log grid and refine every dip to a zero.

    Parameters
    ----------
    kappa_max : float, optional
        Upper end of the scan; defaults to :func:`default_kappa_max`.
    scan_points : int
        Number of log-spaced scan points on ``[kappa_min, kappa_max]``.
    """
    kappa_max = default_kappa_max(problem) if kappa_max is None else float(kappa_max)
    if kappa_max <= kappa_min:
        raise ValueError("kappa_max must exceed kappa_min")
    grid = np.geomspace(kappa_min, kappa_max, scan_points)
    smin, smax = _sigma_min(problem, grid)
    warnings = []
    found: list[float] = []
    for i in range(1, scan_points - 1):
        if not (smin[i] <= smin[i - 1] and smin[i] <= smin[i + 1]):
            continue
        if smin[i] == smin[i - 1] == smin[i + 1]:
            continue
        k = _refine(problem, grid[i - 1], grid[i + 1], KAPPA_XTOL * max(1.0, grid[i]))
        Js = jost_on_imaginary_axis(problem, _near(k))
        sv = np.linalg.svd(Js[0], compute_uv=False)
        if sv[-1] <= _tolerance_from(Js):
            if found and abs(k - found[-1]) < 1e-6 * max(1.0, k):
                continue
            found.append(k)
    if smin[-1] < smin[-2] and smin[-1] < 1e-3 * smax[-1]:
        warnings.append(f"sigma_min still falling at kappa_max = {kappa_max:.4g}; a state may lie beyond")
    for a, b in zip(found, found[1:]):
        if b - a < 1e-4 * b:
            warnings.append(f"states at {a:.10g} and {b:.10g} are nearly degenerate; check resolution")
    states = [bound_state(problem, k) for k in found]
    return Spectrum(states, kappa_max, warnings)


# ---------------------------------------------------------------- normalized solutions


def gl_solution(problem: Problem, state: BoundState, xs) -> tuple[np.ndarray, np.ndarray]:
    """``Phi = phi(i kappa, x) C`` and its derivative, built from the decaying form ``f K C``."""
    f, df, _ = jost_batch(problem, [1j * state.kappa], xs)
    KC = state.K @ state.C
    return f[:, 0] @ KC, df[:, 0] @ KC


def marchenko_solution(problem: Problem, state: BoundState, xs) -> tuple[np.ndarray, np.ndarray]:
    """``Psi_j = f(i kappa, x) M`` and its derivative."""
    f, df, _ = jost_batch(problem, [1j * state.kappa], xs)
    return f[:, 0] @ state.M, df[:, 0] @ state.M


def orthonormality_residuals(problem: Problem, spectrum: Spectrum, xs=None) -> dict[str, float]:
    """Max deviation of ``int Phi_j^† Phi_l`` from ``delta_jl Q_j`` (and the Marchenko analog).

    Integrals are evaluated by composite Simpson quadrature on ``xs`` plus the
    exact exponential tail beyond its end, independently of the normalization.
    """
    from scipy.integrate import simpson

    states = spectrum.states
    if not states:
        return {"gl": 0.0, "marchenko": 0.0}
    kmin = min(s.kappa for s in states)
    if xs is None:
        end = max(problem.x_max, 0.0) + 30.0 / kmin
        xs = np.linspace(0.0, end, int(end / 0.005) + 1)
    end = xs[-1]
    Phis = [gl_solution(problem, s, xs)[0] for s in states]
    Psis = [marchenko_solution(problem, s, xs)[0] for s in states]
    worst = {"gl": 0.0, "marchenko": 0.0}
    for label, sols, proj in (("gl", Phis, "Q"), ("marchenko", Psis, "P")):
        for a, (sa, Xa) in enumerate(zip(states, sols)):
            for b, (sb, Xb) in enumerate(zip(states, sols)):
                integrand = np.conj(np.swapaxes(Xa, 1, 2)) @ Xb
                val = simpson(integrand, x=xs, axis=0)
                # beyond xs[-1] >= x_max both solutions are pure exponentials
                val = val + integrand[-1] / (sa.kappa + sb.kappa)
                target = getattr(sa, proj) if a == b else 0.0
                worst[label] = max(worst[label], float(np.linalg.norm(val - target, 2)))
    return worst
