"""Jost, regular and growing solutions; Jost and scattering matrices.

All solutions come from one batched Dormand–Prince 5(4) integrator working on
the first-order system ``(psi, psi')`` with optional companion integrals
``int psi^† psi``.  Every batch member carries its own exponential scale
``sigma`` so that the stored state ``e^{-sigma x} y`` stays of order one,
which keeps the relative error control meaningful for growing and decaying
solutions alike.  Beyond ``x_max`` the potential vanishes and the solutions
are continued in closed form.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .potential import Problem

RTOL = 1e-10
ATOL = 1e-12
K_ZERO_SHIFT = 1e-6
COND_FLAG = 1e12

# Dormand–Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_A_MAT = np.zeros((7, 7), dtype=complex)
for _i, _row in enumerate(_A):
    _A_MAT[_i, : len(_row)] = _row
_E_C = _E.astype(complex)


class IntegrationError(RuntimeError):
    """The adaptive integrator could not meet its tolerance."""


def default_rtol() -> float:
    """Relative tolerance, overridable through ``SPECSURG_TOL``."""
    env = os.environ.get("SPECSURG_TOL")
    if env:
        val = float(env)
        if not (0 < val < 1):
            raise ValueError(f"SPECSURG_TOL must lie in (0, 1), got {env}")
        return val
    return RTOL


@dataclass(frozen=True, eq=False)
class MatrixSolution:
    """Samples of a matrix solution at one ``k``.

    Attributes
    ----------
    k : complex
    xs : numpy.ndarray
        Increasing nodes.
    psi, psi_prime : numpy.ndarray
        Values and derivatives, shape ``(len(xs), n, n)``.
    gram : numpy.ndarray or None
        Companion integral of ``psi^† psi``: over ``[0, x]`` for regular
        solutions, over ``[x, inf)`` for Jost solutions.
    """

    k: complex
    xs: np.ndarray
    psi: np.ndarray
    psi_prime: np.ndarray
    gram: np.ndarray | None = None

    def at(self, x: float) -> tuple[np.ndarray, np.ndarray]:
        i = int(np.argmin(np.abs(self.xs - x)))
        if abs(self.xs[i] - x) > 1e-12 * max(1.0, abs(x)):
            raise KeyError(f"x = {x} is not a node of this solution")
        return self.psi[i], self.psi_prime[i]


@dataclass(frozen=True)
class JostData:
    k: complex
    J: np.ndarray


# ---------------------------------------------------------------- integrator


def _expint(c, d):
    """``int_0^d e^{c y} dy`` elementwise, stable for small ``c d``."""
    c = np.asarray(c, dtype=complex)
    d = np.asarray(d, dtype=float)
    cd = c * d
    small = np.abs(cd) < 1e-8
    safe_c = np.where(small, 1.0, c)
    big = np.expm1(cd) / safe_c
    series = d * (1.0 + cd / 2.0 + cd * cd / 6.0)
    return np.where(small, series, big)


def _hermitian_t(M):
    return np.conj(np.swapaxes(M, -1, -2))


class _Batch:
    """Adaptive integration of ``psi'' = (V - k^2) psi`` for a batch of ``k``."""

    def __init__(self, problem: Problem, ks, sigmas, gram_sign: int = 0, rtol: float | None = None, atol: float = ATOL):
        self.V = problem.potential.stage_evaluator()
        self.n = problem.n
        self.ks = np.asarray(ks, dtype=complex)
        self.k2 = (self.ks**2)[:, None, None]
        self.sig = np.asarray(sigmas, dtype=float)[:, None, None]
        self.gram_sign = gram_sign
        self.rtol = default_rtol() if rtol is None else rtol
        self.atol = atol
        self.nfev = 0
        # linear part as one block matrix [[-sig, I], [V - k^2, -sig]] per batch member
        n, nb = self.n, self.ks.size
        eye = np.eye(n, dtype=complex)
        base = np.zeros((nb, 2 * n, 2 * n), dtype=complex)
        base[:, :n, :n] = -self.sig * eye
        base[:, :n, n:] = eye
        base[:, n:, :n] = -self.k2 * eye
        base[:, n:, n:] = -self.sig * eye
        self._base = base

    def rhs(self, V, Y):
        self.nfev += 1
        n = self.n
        L = self._base.copy()
        L[:, n:, :n] += V
        nb, c = Y.shape[:2]
        out = np.empty_like(Y)
        flat = Y.reshape(nb, c * n, n)
        np.matmul(L, flat[:, : 2 * n], out=out.reshape(nb, c * n, n)[:, : 2 * n])
        if self.gram_sign:
            psi = Y[:, 0]
            out[:, 2] = self.gram_sign * np.matmul(_hermitian_t(psi), psi) - 2.0 * self.sig * Y[:, 2]
        return out

    def run(self, x0: float, Y0, targets, stops=()):
        """Integrate from ``x0`` through ``targets`` (monotone, in travel order).

        ``stops`` are extra points (potential grid nodes) the stepper lands
        on without recording.  Returns the scaled states at ``targets``.
        """
        targets = np.asarray(targets, dtype=float)
        out = np.empty((targets.size,) + Y0.shape, dtype=complex)
        if targets.size == 0:
            return out
        direction = 1.0 if targets[-1] >= x0 else -1.0
        stops = np.asarray(stops, dtype=float)
        if stops.size:
            lo, hi = (x0, targets[-1]) if direction > 0 else (targets[-1], x0)
            stops = stops[(stops > lo) & (stops < hi)]
        allpts = np.concatenate([targets, stops])
        is_target = np.concatenate([np.ones(targets.size, bool), np.zeros(stops.size, bool)])
        order = np.argsort(direction * allpts, kind="stable")
        allpts, is_target = allpts[order], is_target[order]
        target_index = np.cumsum(is_target) - 1

        x = float(x0)
        Y = np.array(Y0, dtype=complex)
        shape = Y.shape
        kmax = float(np.max(np.abs(self.ks))) if self.ks.size else 0.0
        span = abs(float(allpts[-1]) - x) or 1.0
        h = min(0.05, 0.5 / (1.0 + kmax), span)
        Ks = np.empty((7, Y.size), dtype=complex)
        Ks[0] = self.rhs(self.V(np.array([x]))[0], Y).ravel()
        rtol, atol = self.rtol, self.atol
        nb = shape[0]
        for xt, rec, ti in zip(allpts, is_target, target_index):
            xt = float(xt)
            while abs(xt - x) > 1e-14 * max(1.0, abs(x)):
                step = min(h, abs(xt - x))
                last = step == abs(xt - x)
                hs = direction * step
                yflat = Y.ravel()
                Vs = self.V(x + _C[1:] * hs)
                for s in range(1, 7):
                    acc = yflat + hs * (_A_MAT[s, :s] @ Ks[:s])
                    Ks[s] = self.rhs(Vs[s - 1], acc.reshape(shape)).ravel()
                # the seventh stage argument is the 5th-order solution
                err = hs * (_E_C @ Ks)
                sc = atol + rtol * np.maximum(np.abs(yflat), np.abs(acc))
                ratio = (np.abs(err) / sc).reshape(nb, -1)
                enorm = math.sqrt(float((ratio * ratio).sum(axis=1).max()) / ratio.shape[1])
                if not np.isfinite(enorm):
                    enorm = 1e10
                if enorm <= 1.0:
                    x = xt if last else x + hs
                    Y = acc.reshape(shape)
                    Ks[0] = Ks[6]
                    fac = 5.0 if enorm == 0 else min(5.0, 0.9 * enorm**-0.2)
                    if not last or fac < 1.0:
                        h = step * fac
                else:
                    h = step * max(0.2, 0.9 * enorm**-0.2)
                if h < 1e-13 * max(1.0, abs(x)):
                    raise IntegrationError(f"step size underflow at x = {x:.6g}")
            if rec:
                out[ti] = Y
        return out


# ---------------------------------------------------------------- free continuation


def _free_forward(ks, psi0, dpsi0, gram0, d):
    """Continue a solution of the free equation a distance ``d >= 0`` forward.

    ``psi0`` etc. have shape ``(nb, n, n)``; ``d`` shape ``(m,)``.  Returns
    arrays of shape ``(m, nb, n, n)``; the gram accumulates ``int psi^† psi``.
    """
    ks = np.asarray(ks, dtype=complex)[None, :, None, None]
    d4 = np.asarray(d, dtype=float)[:, None, None, None]
    kz = np.where(ks == 0, 1.0, ks)
    a = 0.5 * (psi0 + dpsi0 / (1j * kz))
    b = 0.5 * (psi0 - dpsi0 / (1j * kz))
    ep, em = np.exp(1j * ks * d4), np.exp(-1j * ks * d4)
    psi = ep * a + em * b
    dpsi = 1j * ks * (ep * a - em * b)
    zero_k = ks == 0
    if np.any(zero_k):
        psi = np.where(zero_k, psi0 + d4 * dpsi0, psi)
        dpsi = np.where(zero_k, dpsi0 + 0 * d4, dpsi)
    gram = None
    if gram0 is not None:
        ah, bh = _hermitian_t(a), _hermitian_t(b)
        im2, re2 = 2 * ks.imag, 2j * ks.real
        gram = (
            gram0
            + np.matmul(ah, a) * _expint(-im2, d4)
            + np.matmul(bh, b) * _expint(im2, d4)
            + np.matmul(ah, b) * _expint(-re2, d4)
            + np.matmul(bh, a) * _expint(re2, d4)
        )
    return psi, dpsi, gram


def _split_nodes(xs, x_max):
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or np.any(np.diff(xs) <= 0):
        raise ValueError("grid must be strictly increasing")
    if xs[0] < 0:
        raise ValueError("grid must lie in [0, inf)")
    return xs <= x_max


def _stops(problem: Problem):
    pot = problem.potential
    return pot.x if pot.kind == "grid" else ()


# ---------------------------------------------------------------- batch solves


def jost_batch(problem: Problem, ks, xs, gram: bool = False, rtol: float | None = None):
    """Jost solutions ``f(k, x)`` for many ``k`` on a common grid.

    Returns ``psi, dpsi, G`` of shape ``(len(xs), len(ks), n, n)`` (``G`` is
    ``int_x^inf f^† f`` or ``None``).  ``gram=True`` needs ``Im k > 0``.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(ks.imag < -1e-15):
        raise ValueError("Jost solutions need Im k >= 0")
    if np.any(ks == 0):
        raise ValueError("Jost solution is not defined at k = 0")
    if gram and np.any(ks.imag <= 0):
        raise ValueError("the tail integral of f^dag f needs Im k > 0")
    n, nb = problem.n, ks.size
    xm = problem.x_max
    inner = _split_nodes(xs, xm)
    eye = np.eye(n, dtype=complex)
    psi = np.empty((xs.size, nb, n, n), dtype=complex)
    dpsi = np.empty_like(psi)
    G = np.empty_like(psi) if gram else None
    kk = ks[None, :, None, None]
    outer_x = xs[~inner][:, None, None, None]
    e_out = np.exp(1j * kk * outer_x)
    psi[~inner] = e_out * eye
    dpsi[~inner] = 1j * kk * e_out * eye
    if gram:
        G[~inner] = np.exp(-2 * kk.imag * outer_x) / (2 * kk.imag) * eye
    if np.any(inner):
        sig = -ks.imag
        batch = _Batch(problem, ks, sig, gram_sign=-1 if gram else 0, rtol=rtol)
        Y0 = np.zeros((nb, 3 if gram else 2, n, n), dtype=complex)
        # scaled initial data e^{-sigma x_max} f(x_max) = e^{i Re(k) x_max}
        ph = np.exp(1j * ks.real * xm)[:, None, None]
        Y0[:, 0] = ph * eye
        Y0[:, 1] = 1j * ks[:, None, None] * ph * eye
        if gram:
            Y0[:, 2] = eye / (2 * ks.imag)[:, None, None]
        tx = xs[inner][::-1]
        Ys = batch.run(xm, Y0, tx, _stops(problem))[::-1]
        scale = np.exp(np.outer(xs[inner], sig))[:, :, None, None]
        psi[inner] = Ys[:, :, 0] * scale
        dpsi[inner] = Ys[:, :, 1] * scale
        if gram:
            G[inner] = Ys[:, :, 2] * scale**2
    return psi, dpsi, G


def regular_batch(problem: Problem, ks, xs, gram: bool = False, rtol: float | None = None, initial=None):
    """Regular solutions ``phi(k, x)`` (``phi(0) = A``, ``phi'(0) = B``) for many ``k``.

    ``initial`` may replace ``(A, B)`` by other initial data at ``x = 0``.
    Returns ``psi, dpsi, G`` with ``G = int_0^x phi^† phi`` when requested.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n, nb = problem.n, ks.size
    A0, B0 = (problem.A, problem.B) if initial is None else initial
    xm = problem.x_max
    inner = _split_nodes(xs, xm)
    psi = np.empty((xs.size, nb, n, n), dtype=complex)
    dpsi = np.empty_like(psi)
    G = np.empty_like(psi) if gram else None
    sig = np.abs(ks.imag)
    Y0 = np.zeros((nb, 3 if gram else 2, n, n), dtype=complex)
    Y0[:, 0] = A0
    Y0[:, 1] = B0
    need_end = np.any(~inner)
    targets = xs[inner]
    at0 = targets == 0.0
    run_targets = targets[~at0]
    if need_end and (run_targets.size == 0 or run_targets[-1] < xm):
        run_targets = np.append(run_targets, xm)
    if xm > 0 and run_targets.size:
        batch = _Batch(problem, ks, sig, gram_sign=1 if gram else 0, rtol=rtol)
        Ys = batch.run(0.0, Y0, run_targets, _stops(problem))
    else:
        Ys = np.empty((0,) + Y0.shape, dtype=complex)
    Yin = np.concatenate([np.repeat(Y0[None], int(at0.sum()), axis=0), Ys[: int((~at0).sum())]])
    scale = np.exp(np.outer(targets, sig))[:, :, None, None]
    psi[inner] = Yin[:, :, 0] * scale
    dpsi[inner] = Yin[:, :, 1] * scale
    if gram:
        G[inner] = Yin[:, :, 2] * scale**2
    if need_end:
        if xm > 0:
            Yend = Ys[-1]
            se = np.exp(sig * xm)[:, None, None]
            p0, d0 = Yend[:, 0] * se, Yend[:, 1] * se
            g0 = Yend[:, 2] * se**2 if gram else None
        else:
            p0 = np.broadcast_to(A0, (nb, n, n)).astype(complex)
            d0 = np.broadcast_to(B0, (nb, n, n)).astype(complex)
            g0 = np.zeros((nb, n, n), dtype=complex) if gram else None
        p, d, g = _free_forward(ks, p0, d0, g0, xs[~inner] - xm)
        psi[~inner], dpsi[~inner] = p, d
        if gram:
            G[~inner] = g
    return psi, dpsi, G


def growing_batch(problem: Problem, kappas, xs, rtol: float | None = None):
    """Growing solutions ``g(i kappa, x) ~ e^{kappa x} I`` for many ``kappa > 0``."""
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(kappas <= 0):
        raise ValueError("growing solution needs kappa > 0")
    n, nb = problem.n, kappas.size
    xm = problem.x_max
    inner = _split_nodes(xs, xm)
    eye = np.eye(n, dtype=complex)
    psi = np.empty((xs.size, nb, n, n), dtype=complex)
    dpsi = np.empty_like(psi)
    kk = kappas[None, :, None, None]
    e_out = np.exp(kk * xs[~inner][:, None, None, None])
    psi[~inner] = e_out * eye
    dpsi[~inner] = kk * e_out * eye
    if np.any(inner):
        batch = _Batch(problem, 1j * kappas, kappas, rtol=rtol)
        Y0 = np.zeros((nb, 2, n, n), dtype=complex)
        Y0[:, 0] = eye
        Y0[:, 1] = kappas[:, None, None] * eye
        Ys = batch.run(xm, Y0, xs[inner][::-1], _stops(problem))[::-1]
        scale = np.exp(np.outer(xs[inner], kappas))[:, :, None, None]
        psi[inner] = Ys[:, :, 0] * scale
        dpsi[inner] = Ys[:, :, 1] * scale
    return psi, dpsi


# ---------------------------------------------------------------- public API


def default_grid(problem: Problem, h: float = 0.01, x_end: float | None = None) -> np.ndarray:
    """Uniform grid on ``[0, x_end]`` (default ``x_max``) containing ``x_max``."""
    xm = problem.x_max
    x_end = xm if x_end is None else max(float(x_end), 0.0)
    if x_end <= 0:
        return np.array([0.0, 1.0])
    pieces = [np.linspace(0.0, min(xm, x_end), max(2, int(math.ceil(min(xm, x_end) / h)) + 1))] if xm > 0 else [np.array([0.0])]
    if x_end > xm:
        m = max(2, int(math.ceil((x_end - xm) / h)) + 1)
        pieces.append(np.linspace(xm, x_end, m)[1:])
    return np.unique(np.concatenate(pieces))


def _single(psi, dpsi, G, k, xs):
    return MatrixSolution(k, np.asarray(xs, dtype=float), psi[:, 0], dpsi[:, 0], None if G is None else G[:, 0])


def jost_solution(problem: Problem, k: complex, xs=None, gram: bool = False) -> MatrixSolution:
    """Jost solution ``f(k, x) ~ e^{ikx} I`` sampled on ``xs``."""
    xs = default_grid(problem) if xs is None else np.asarray(xs, dtype=float)
    return _single(*jost_batch(problem, [k], xs, gram=gram), complex(k), xs)


def regular_solution(problem: Problem, k: complex, xs=None, gram: bool = False) -> MatrixSolution:
    """Regular solution with ``phi(0) = A``, ``phi'(0) = B`` sampled on ``xs``."""
    xs = default_grid(problem) if xs is None else np.asarray(xs, dtype=float)
    return _single(*regular_batch(problem, [k], xs, gram=gram), complex(k), xs)


def growing_solution(problem: Problem, k: complex, xs=None) -> MatrixSolution:
    """Solution ``g(i kappa, x) ~ e^{kappa x} I`` for ``k = i kappa``."""
    k = complex(k)
    if abs(k.real) > 1e-14 or k.imag <= 0:
        raise ValueError("growing solution needs k = i kappa with kappa > 0")
    xs = default_grid(problem) if xs is None else np.asarray(xs, dtype=float)
    psi, dpsi = growing_batch(problem, [k.imag], xs)
    return MatrixSolution(k, xs, psi[:, 0], dpsi[:, 0])


def _jost_from_f(problem: Problem, f0, df0):
    """``J = f(-k*,0)^† B - f'(-k*,0)^† A`` from values at ``-k*``."""
    return np.matmul(_hermitian_t(f0), problem.B) - np.matmul(_hermitian_t(df0), problem.A)


def jost_matrices(problem: Problem, ks, rtol: float | None = None) -> np.ndarray:
    """Jost matrices for many ``k`` in the closed upper half plane.

    ``k = 0`` is replaced by the average over ``k = +-1e-6``.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=complex))
    zero = ks == 0
    if np.any(ks.imag < -1e-15):
        raise ValueError("Jost matrix is evaluated in the closed upper half plane")
    if np.any(zero) and not math.isfinite(problem.moments["L1_1"]):
        raise ValueError("k = 0 needs a finite first moment of V")
    kk = np.where(zero, K_ZERO_SHIFT, ks)
    evals = np.concatenate([kk, -K_ZERO_SHIFT * np.ones(int(zero.sum()))])
    mirror = -np.conj(evals)
    f0, df0, _ = jost_batch(problem, mirror, [0.0], rtol=rtol)
    J = _jost_from_f(problem, f0[0], df0[0])
    out = J[: ks.size].copy()
    if np.any(zero):
        out[zero] = 0.5 * (out[zero] + J[ks.size:])
    return out


def jost_matrix(problem: Problem, k: complex) -> JostData:
    """Jost matrix ``J(k)``."""
    return JostData(complex(k), jost_matrices(problem, [k])[0])


def scattering_matrices(problem: Problem, ks, rtol: float | None = None) -> np.ndarray:
    """``S(k) = -J(-k) J(k)^{-1}`` for real nonzero ``k``."""
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    if np.any(ks == 0):
        raise ValueError("scattering matrix needs k != 0")
    # J(k) uses f(-k); J(-k) uses f(k).  One batch covers both.
    f0, df0, _ = jost_batch(problem, np.concatenate([-ks, ks]).astype(complex), [0.0], rtol=rtol)
    J = _jost_from_f(problem, f0[0], df0[0])
    Jp, Jm = J[: ks.size], J[ks.size:]
    conds = np.linalg.cond(Jp)
    if np.any(conds > COND_FLAG):
        bad = ks[conds > COND_FLAG]
        raise np.linalg.LinAlgError(f"J(k) is nearly singular at k = {bad.tolist()}")
    return -np.matmul(Jm, np.linalg.inv(Jp))


def scattering_matrix(problem: Problem, k: float) -> np.ndarray:
    return scattering_matrices(problem, [k])[0]


def physical_solution(problem: Problem, k: float, xs=None) -> MatrixSolution:
    """``Psi(k, x) = f(-k, x) + f(k, x) S(k)`` for real ``k != 0``."""
    k = float(k)
    if k == 0:
        raise ValueError("physical solution needs k != 0")
    xs = default_grid(problem) if xs is None else np.asarray(xs, dtype=float)
    if xs[0] != 0.0:
        xs_all = np.concatenate([[0.0], xs])
    else:
        xs_all = xs
    f, df, _ = jost_batch(problem, [k, -k], xs_all)
    J = _jost_from_f(problem, f[0], df[0])  # [J(-k), J(k)]
    S = -J[0] @ np.linalg.inv(J[1])
    psi = f[:, 1] + f[:, 0] @ S
    dpsi = df[:, 1] + df[:, 0] @ S
    if xs_all is not xs:
        psi, dpsi = psi[1:], dpsi[1:]
    return MatrixSolution(complex(k), xs, psi, dpsi)
