"""Dense complex-matrix helpers: pseudoinverses, kernel projections, square roots.

Every function is pure and works on small square ``numpy`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class RankInfo:
    """Outcome of a singular-value rank decision.

    Attributes
    ----------
    rank : int
        Number of singular values at or above ``tolerance_used``.
    singular_values : numpy.ndarray
        Singular values in nonincreasing order.
    tolerance_used : float
        Threshold that separated the retained values from the discarded ones.
    """

    rank: int
    singular_values: np.ndarray
    tolerance_used: float


def _as_square(M, name: str = "M") -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def default_tol(M: np.ndarray, s: np.ndarray | None = None) -> float:
    """Rank tolerance ``n * sigma_max * 1e-12`` (floored at the smallest normal)."""
    if s is None:
        s = np.linalg.svd(M, compute_uv=False)
    smax = float(s[0]) if s.size else 0.0
    return max(M.shape[0] * smax * 1e-12, np.finfo(float).tiny)


def rank_info(M, tol: float | None = None) -> RankInfo:
    """Numerical rank of ``M`` with the singular values behind the decision."""
    M = _as_square(M)
    s = np.linalg.svd(M, compute_uv=False)
    tol = default_tol(M, s) if tol is None else float(tol)
    return RankInfo(int(np.sum(s >= tol)), s, tol)


def pinv(M, tol: float | None = None) -> np.ndarray:
    """Moore–Penrose inverse through a thresholded SVD.

    Parameters
    ----------
    M : array_like
        Square complex matrix.
    tol : float, optional
        Singular values below ``tol`` are treated as zero.  Defaults to
        ``n * sigma_max * 1e-12``.
    """
    M = _as_square(M)
    if tol is not None and tol <= 0:
        raise ValueError("tol must be positive")
    U, s, Vh = np.linalg.svd(M)
    tol = default_tol(M, s) if tol is None else float(tol)
    keep = s >= tol
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vh.conj().T * inv_s) @ U.conj().T


def penrose_residuals(M, Mp) -> tuple[float, float, float, float]:
    """Operator-norm residuals of the four Penrose equalities."""
    M = np.asarray(M, dtype=complex)
    Mp = np.asarray(Mp, dtype=complex)
    MMp = M @ Mp
    MpM = Mp @ M
    return (
        float(np.linalg.norm(MMp @ M - M, 2)),
        float(np.linalg.norm(MpM @ Mp - Mp, 2)),
        float(np.linalg.norm(MMp.conj().T - MMp, 2)),
        float(np.linalg.norm(MpM.conj().T - MpM, 2)),
    )


def kernel_projection(M, tol: float | None = None) -> tuple[np.ndarray, RankInfo]:
    """Orthogonal projection onto ``Ker M``.

    Returns
    -------
    Q : numpy.ndarray
        Hermitian idempotent with ``M @ Q`` approximately zero.
    info : RankInfo
        Rank decision for ``M``.
    """
    M = _as_square(M)
    _, s, Vh = np.linalg.svd(M)
    tol = default_tol(M, s) if tol is None else float(tol)
    # An all-zero matrix has sigma_max = 0; every direction is in the kernel.
    rank = int(np.sum(s >= tol)) if s[0] > 0 else 0
    null = Vh[rank:].conj().T
    Q = null @ null.conj().T
    Q = 0.5 * (Q + Q.conj().T)
    return Q, RankInfo(rank, s, tol)


def range_projection(M, tol: float | None = None) -> np.ndarray:
    """Orthogonal projection onto the column space of ``M``."""
    M = _as_square(M)
    U, s, _ = np.linalg.svd(M)
    tol = default_tol(M, s) if tol is None else float(tol)
    rank = int(np.sum(s >= tol)) if s[0] > 0 else 0
    basis = U[:, :rank]
    P = basis @ basis.conj().T
    return 0.5 * (P + P.conj().T)


def projection_basis(Q) -> np.ndarray:
    """Orthonormal basis (columns) of the range of a projection ``Q``."""
    Q = _as_square(Q, "Q")
    w, U = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    return U[:, w > 0.5]


def hermitize(M, name: str = "M", tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Symmetrize ``M`` if it is hermitian within ``tol`` (relative), else raise."""
    M = _as_square(M, name)
    scale = max(np.linalg.norm(M, 2), 1.0)
    asym = np.linalg.norm(M - M.conj().T, 2) / scale
    if asym > tol:
        raise ValueError(f"{name} is not hermitian (relative asymmetry {asym:.3e})")
    return 0.5 * (M + M.conj().T)


def _pos_eig(M, name: str) -> tuple[np.ndarray, np.ndarray]:
    H = hermitize(M, name)
    w, U = np.linalg.eigh(H)
    if w[0] <= 0:
        raise ValueError(f"{name} is not positive definite (smallest eigenvalue {w[0]:.3e})")
    return w, U


def sqrt_pos(M) -> np.ndarray:
    """Positive hermitian square root of a positive definite matrix."""
    w, U = _pos_eig(M, "M")
    R = (U * np.sqrt(w)) @ U.conj().T
    return 0.5 * (R + R.conj().T)


def inv_sqrt_pos(M) -> np.ndarray:
    """Positive hermitian square root of the inverse of ``M``."""
    w, U = _pos_eig(M, "M")
    R = (U / np.sqrt(w)) @ U.conj().T
    return 0.5 * (R + R.conj().T)


def psd_sqrt(M, name: str = "M") -> np.ndarray:
    """Square root of a hermitian positive semidefinite matrix.

    Small negative eigenvalues (roundoff) are clipped to zero.
    """
    H = hermitize(M, name)
    w, U = np.linalg.eigh(H)
    scale = max(abs(w).max(), 1.0)
    if w[0] < -1e-10 * scale:
        raise ValueError(f"{name} is not positive semidefinite (eigenvalue {w[0]:.3e})")
    R = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.conj().T
    return 0.5 * (R + R.conj().T)


def pinv_derivative(Wplus, integrand) -> np.ndarray:
    """Derivative of ``W(x)^+`` when ``W'(x) = -integrand``.

    For a family ``W = W1 (+) 0`` of fixed range, ``(W^+)' = W^+ integrand W^+``.
    """
    Wplus = np.asarray(Wplus, dtype=complex)
    integrand = np.asarray(integrand, dtype=complex)
    if Wplus.shape != integrand.shape or Wplus.ndim != 2:
        raise ValueError(f"dimension mismatch: {Wplus.shape} vs {integrand.shape}")
    return Wplus @ integrand @ Wplus


def restricted_inverse(W, Q) -> np.ndarray:
    """Pseudoinverse of ``W = W1 (+) 0`` where ``Q`` projects onto the range of ``W1``.

    Computed as ``U (U^† W U)^{-1} U^†`` with ``U`` an orthonormal basis of ``Q``,
    so no rank threshold is involved.  Accepts a stack of matrices in ``W``.
    """
    U = projection_basis(Q)
    W = np.asarray(W, dtype=complex)
    if U.shape[1] == 0:
        return np.zeros_like(W)
    Uh = U.conj().T
    inner = Uh @ W @ U
    return U @ np.linalg.inv(inner) @ Uh
