"""Verification harness: golden closed-form suite, invariant battery, Parseval check.

Every suite returns a :class:`Report` of measured quantities against fixed
tolerances.  Reports serialize to deterministic JSON and to a text table.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from . import matops, spectra, surgery
from .potential import BoundaryCondition, Check, Potential, Problem, dumps
from .solver import jost_batch, jost_matrices, regular_batch, scattering_matrices

ORACLE_REL = 1e-6
PENROSE_TOL = 1e-10
D_TOL = 1e-8
D_ISOMETRY_TOL = 1e-9
ORTHO_TOL = 1e-6
GL_TOL = 1e-8
JOST_TOL = 1e-6
DET_TOL = 1e-6
UNITARY_TOL = 1e-7
SYMMETRY_TOL = 1e-8
EVEN_TOL = 1e-9
REPRESENTATION_TOL = 1e-7
SOLUTION_TOL = 1e-7
ROUND_TRIP_TOL = 1e-6
BOUNDARY_ROUND_TRIP_TOL = 1e-8
PLUG_IN_TOL = 1e-5
SINGULARITY_TOL = 1e-2
PARSEVAL_TOL = 1e-3
K_CHUNK = 250


@dataclass
class Report:
    """Outcome of one verification suite.

    Attributes
    ----------
    suite : str
    checks : list of Check
    wall_time : float
        Seconds spent building the report.
    info : dict
        Measured values that carry no pass/fail decision.
    timings : dict
        Seconds spent in named stages.  Like ``wall_time`` these are left out
        of the JSON form unless asked for, so that the JSON is reproducible.
    """

    suite: str
    checks: list[Check] = field(default_factory=list)
    wall_time: float = 0.0
    info: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, measured: float, tolerance: float, anchor: str, passed: bool | None = None) -> Check:
        measured = float(measured)
        ok = (measured <= tolerance) if passed is None else bool(passed)
        check = Check(name, measured, float(tolerance), bool(ok and math.isfinite(measured)), anchor)
        self.checks.append(check)
        return check

    def extend(self, other: "Report", prefix: str = "") -> None:
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.measured, c.tolerance, c.passed, c.anchor))
        for key, val in other.info.items():
            self.info[prefix + key] = val
        for key, val in other.timings.items():
            self.timings[prefix + key] = val

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self, timing: bool = False) -> dict:
        def num(v):
            return v if math.isfinite(v) else str(v)

        d = {
            "suite": self.suite,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "anchor": c.anchor, "measured": num(c.measured), "tolerance": num(c.tolerance), "pass": c.passed}
                for c in self.checks
            ],
            "info": {k: _plain(v) for k, v in self.info.items()},
        }
        if timing:
            d["wall_time"] = self.wall_time
            d["timings"] = dict(self.timings)
        return d

    def to_json(self, timing: bool = False) -> str:
        return dumps(self.to_dict(timing))

    def table(self) -> str:
        rows = [("check", "measured", "tolerance", "pass", "identity")]
        rows += [(c.name, f"{c.measured:.3e}", f"{c.tolerance:.1e}", "PASS" if c.passed else "FAIL", c.anchor) for c in self.checks]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'} ({self.wall_time:.1f} s)"]
        for r in rows:
            lines.append("  ".join(r[i].ljust(widths[i]) for i in range(4)) + "  " + r[4])
        for key, val in self.info.items():
            lines.append(f"info {key}: {_plain(val)}")
        for key, val in self.timings.items():
            lines.append(f"time {key}: {val:.2f} s")
        return "\n".join(lines)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (bool, int, float, str)) or v is None:
        return v
    return str(v)


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def map_k_chunks(fn: Callable[[np.ndarray], np.ndarray], ks, threads: int | None = None, chunk: int = K_CHUNK) -> np.ndarray:
    """Apply ``fn`` to fixed-size chunks of ``ks`` on a thread pool and concatenate.

    The chunking does not depend on ``threads``, so results are identical
    for every worker count.
    """
    ks = np.asarray(ks)
    pieces = [ks[i : i + chunk] for i in range(0, ks.size, chunk)]
    if not pieces:
        return fn(ks)
    if threads is None or threads <= 1 or len(pieces) == 1:
        return np.concatenate([fn(p) for p in pieces])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(fn, pieces)))


# ---------------------------------------------------------------- golden suite


def _example89_f(k, x):
    return np.exp(1j * k * x) * (1 - 2j / ((k + 1j) * (1 + np.exp(2 * x))))


def _example89_phi(k, x):
    return -(k * np.sin(k * x) + np.cos(k * x) * np.tanh(x)) / (k * k + 1)


def golden_example89(points: int = 50) -> Report:
    """Closed-form checks on the ``example89`` potential with Dirichlet boundary.

    Forward: ``f``, ``phi``, ``J(k) = -k/(k+i)``, ``S(k) = -(k+i)/(k-i)``.
    Surgery: adding ``kappa = 1, C = 4`` must give ``J~(k) = -k(k-i)/(k+i)^2``,
    ``A~ = 0``, ``B~ = -1`` and the ``example89_added`` potential.  The tail
    model of ``V~ - V`` is recorded as information.
    """
    t0 = time.perf_counter()
    rep = Report("golden")
    problem = Problem.example89()
    ks = np.linspace(0.1, 10.0, points)

    xs = np.linspace(0.0, 6.0, 121)
    for k in (0.5, 2.0, 0.3 + 0.4j):
        f = jost_batch(problem, [k], xs)[0][:, 0, 0, 0]
        rep.add(f"f(k={k}) closed form", np.abs(f - _example89_f(k, xs)).max(), SOLUTION_TOL, "Jost solution closed form")
        phi = regular_batch(problem, [k], xs)[0][:, 0, 0, 0]
        ref = _example89_phi(k, xs)
        rep.add(f"phi(k={k}) closed form", np.abs(phi - ref).max() / max(1.0, np.abs(ref).max()), SOLUTION_TOL,
                "regular solution closed form")

    t1 = time.perf_counter()
    J = jost_matrices(problem, ks)[:, 0, 0]
    S = scattering_matrices(problem, ks)[:, 0, 0]
    forward_time = time.perf_counter() - t1
    rep.add("J(k) = -k/(k+i), 50 k in [0.1, 10]", _rel(J, -ks / (ks + 1j)), ORACLE_REL, "Jost matrix closed form")
    rep.add("S(k) = -(k+i)/(k-i), 50 k in [0.1, 10]", np.abs(S + (ks + 1j) / (ks - 1j)).max(), ORACLE_REL,
            "scattering matrix closed form")
    J2 = jost_matrices(problem, [2.0])[0, 0, 0]
    rep.add("J(2) = -2/(2+i)", _rel(J2, -2 / (2 + 1j)), 1e-7, "Jost matrix closed form")
    rep.timings["forward"] = forward_time

    t2 = time.perf_counter()
    spec = spectra.find_bound_states(problem)
    rep.add("no bound states before surgery", len(spec.states), 0, "empty point spectrum")
    res = surgery.solve_gl_add(problem, 1.0, [[4.0]], spectrum=spec)
    Jt = jost_matrices(res.problem, ks)[:, 0, 0]
    surgery_time = time.perf_counter() - t2
    Jt_ref = -ks * (ks - 1j) / (ks + 1j) ** 2
    rep.add("J~(k) = -k(k-i)/(k+i)^2 (direct solve)", _rel(Jt, Jt_ref), ORACLE_REL, "transformed Jost matrix")
    Jf = res.transformed_jost(ks)[:, 0, 0]
    rep.add("J~(k) = -k(k-i)/(k+i)^2 (factor)", _rel(Jf, Jt_ref), ORACLE_REL, "transformed Jost matrix")
    rep.add("A~ = 0", np.abs(res.boundary_tilde.A).max(), 0.0, "transformed boundary matrices")
    rep.add("B~ = -1", np.abs(res.boundary_tilde.B + 1).max(), 0.0, "transformed boundary matrices")
    sel = res.xs <= 10.0
    Vt = res.problem.potential(res.xs[sel])[:, 0, 0]
    Vref = Potential.catalog("example89_added")(res.xs[sel])[:, 0, 0]
    rep.add("V~ sup error on [0, 10]", np.abs(Vt - Vref).max(), ORACLE_REL, "transformed potential closed form")
    rep.timings["surgery"] = surgery_time

    fit = surgery.decay_fit(res.xs, problem.potential(res.xs)[:, 0, 0], res.problem.potential(res.xs)[:, 0, 0], 1.0)
    rep.info["decay_model"] = fit.model
    rep.info["decay_constant"] = fit.constant
    rep.info["decay_power"] = fit.slope_diag
    rep.info["decay_scaled_grows"] = fit.diverges
    rep.wall_time = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- Parseval


def bump(a: float = 1.0, b: float = 2.0, n: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth bump supported on ``[a, b]`` along the unit vector ``(1, ..., 1)/sqrt(n)``."""
    e = np.ones(n) / math.sqrt(n)

    def h(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = (x > a) & (x < b)
        t = x[inside]
        out[inside] = np.exp(-1.0 / ((t - a) * (b - t)) + 4.0 / (b - a) ** 2)
        return out[:, None] * e

    return h


def parseval_smeared(problem: Problem, h: Callable | None = None, k_max: float = 60.0, npts: int = 2000,
                     support: tuple[float, float] = (1.0, 2.0), nx: int = 401, threads: int | None = None,
                     spectrum: spectra.Spectrum | None = None) -> Report:
    """Completeness check with a test function ``h`` supported in ``support``.

    Compares ``(1/2 pi) int_0^k_max |int Psi(k,x)^† h dx|^2 dk + sum_j |int Phi_j^† h dx|^2``
    with ``int |h|^2``.  The ``k`` integral uses the midpoint rule, which
    never samples ``k = 0`` where ``S`` may be undefined.
    """
    t0 = time.perf_counter()
    rep = Report("parseval")
    h = bump(*support, n=problem.n) if h is None else h
    xs = np.linspace(support[0], support[1], nx)
    hv = np.asarray(h(xs), dtype=complex).reshape(nx, problem.n)
    rhs = float(simpson(np.sum(np.abs(hv) ** 2, axis=1), x=xs))
    dk = k_max / npts
    ks = (np.arange(npts) + 0.5) * dk
    xs0 = np.concatenate([[0.0], xs]) if xs[0] > 0 else xs
    off = 1 if xs[0] > 0 else 0

    def chunk(kc):
        kk = np.concatenate([kc, -kc]).astype(complex)
        f, df, _ = jost_batch(problem, kk, xs0)
        # column 0..m-1: f(k), m..: f(-k); J(k) uses f(-k) at 0
        m = kc.size
        fh0 = np.conj(np.swapaxes(f[0], -1, -2))
        dfh0 = np.conj(np.swapaxes(df[0], -1, -2))
        J = fh0 @ problem.B - dfh0 @ problem.A  # J(-k) for first half, J(k) for second
        S = -J[:m] @ np.linalg.inv(J[m:])
        Psi = f[off:, m:] + f[off:, :m] @ S  # (nx, m, n, n)
        proj = np.conj(np.swapaxes(Psi, -1, -2)) @ hv[:, None, :, None]
        vec = simpson(proj[..., 0], x=xs, axis=0)  # (m, n)
        return np.sum(np.abs(vec) ** 2, axis=1)

    dens = map_k_chunks(chunk, ks, threads)
    continuous = float(np.sum(dens) * dk / (2 * math.pi))
    spectrum = spectra.find_bound_states(problem) if spectrum is None else spectrum
    discrete = 0.0
    for state in spectrum.states:
        Phi, _ = spectra.gl_solution(problem, state, xs)
        proj = np.conj(np.swapaxes(Phi, -1, -2)) @ hv[:, :, None]
        vec = simpson(proj[..., 0], x=xs, axis=0)
        discrete += float(np.sum(np.abs(vec) ** 2))
    lhs = continuous + discrete
    defect = abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs)
    rep.add("Parseval relative defect", defect, PARSEVAL_TOL, "completeness of physical and bound-state solutions")
    rep.info.update({"continuous": continuous, "discrete": discrete, "norm_h": rhs, "k_max": k_max, "bound_states": len(spectrum.states)})
    rep.wall_time = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- battery pieces


def _penrose_scaled(M) -> float:
    M = np.asarray(M, dtype=complex)
    Mp = matops.pinv(M)
    r1, r2, r3, r4 = matops.penrose_residuals(M, Mp)
    return max(r1 / max(1.0, np.linalg.norm(M, 2)), r2 / max(1.0, np.linalg.norm(Mp, 2)), r3, r4)


def boundary_checks(rep: Report, boundary: BoundaryCondition, prefix: str = "") -> None:
    rep.add(prefix + "boundary -B^dag A + A^dag B = 0", boundary.selfadjoint_residual(), 1e-10, "selfadjoint boundary condition")
    lam = boundary.min_positivity()
    rep.add(prefix + "boundary A^dag A + B^dag B > 0 (min eigenvalue)", lam, 1e-10, "nondegenerate boundary condition",
            passed=lam > 1e-10)


def forward_checks(problem: Problem, level: str = "quick") -> Report:
    """Scattering-side identities on a real ``k`` grid."""
    rep = Report("forward")
    nk = 8 if level == "quick" else 32
    ks = np.linspace(0.2, 5.0, nk)
    S = scattering_matrices(problem, ks)
    Sm = scattering_matrices(problem, -ks)
    eye = np.eye(problem.n)
    rep.add("S^dag S = I", max(np.linalg.norm(s.conj().T @ s - eye, 2) for s in S), UNITARY_TOL, "unitarity of S")
    rep.add("S(-k) S(k) = I", max(np.linalg.norm(a @ b - eye, 2) for a, b in zip(Sm, S)), SYMMETRY_TOL, "S(-k) = S(k)^-1")

    x_end = max(problem.x_max, 0.0) + 2.0
    xs = np.linspace(0.0, x_end, 401 if level == "quick" else 1601)
    kr = np.array([0.7, 1.9, 3.3])
    phi_p, _, _ = regular_batch(problem, kr, xs)
    phi_m, _, _ = regular_batch(problem, -kr, xs)
    scale = np.abs(phi_p).max()
    rep.add("phi(-k, x) = phi(k, x)", np.abs(phi_p - phi_m).max() / max(scale, 1e-300), EVEN_TOL, "evenness of phi in k")
    f, _, _ = jost_batch(problem, np.concatenate([kr, -kr]).astype(complex), xs)
    J = jost_matrices(problem, kr)
    Jm = jost_matrices(problem, np.conj(-kr))  # J(-k) for real k, via f(k)
    worst = 0.0
    for i, k in enumerate(kr):
        lhs = 2j * k * phi_p[:, i]
        rhs = f[:, i] @ Jm[i] - f[:, i + kr.size] @ J[i]
        worst = max(worst, float(np.abs(lhs - rhs).max() / max(np.abs(lhs).max(), 1e-300)))
    rep.add("2ik phi = f(k) J(-k) - f(-k) J(k)", worst, REPRESENTATION_TOL, "phi from the Jost solutions")
    return rep


def state_checks(problem: Problem, spectrum: spectra.Spectrum, level: str = "quick") -> Report:
    """Pseudoinverse, dependency-matrix and orthonormality identities of every bound state."""
    rep = Report("states")
    pen = _penrose_scaled(jost_matrices(problem, [1.3])[0])
    worst = {"DhD": 0.0, "DDh": 0.0, "pinvD": 0.0, "iso": 0.0, "psi": 0.0, "rank": 0}
    for state in spectrum.states:
        J = spectra.jost_on_imaginary_axis(problem, [state.kappa])[0]
        for M in (J, state.C, state.M, state.D, state.H):
            pen = max(pen, _penrose_scaled(M))
        D, Dh = state.D, state.D.conj().T
        worst["DhD"] = max(worst["DhD"], float(np.linalg.norm(Dh @ D - state.Q, 2)))
        worst["DDh"] = max(worst["DDh"], float(np.linalg.norm(D @ Dh - state.P, 2)))
        worst["pinvD"] = max(worst["pinvD"], float(np.linalg.norm(matops.pinv(D) - Dh, 2)))
        worst["iso"] = max(worst["iso"], float(np.linalg.norm(D @ Dh @ D - D, 2)), float(np.linalg.norm(Dh @ D @ Dh - Dh, 2)))
        rq = matops.rank_info(state.Q, 0.5).rank
        rp = matops.rank_info(state.P, 0.5).rank
        worst["rank"] = max(worst["rank"], abs(rq - state.m), abs(rp - state.m))
        reach = max(problem.x_max, 0.0) + 4.0 / state.kappa
        xs = np.linspace(0.0, reach, 101 if level == "quick" else 401)
        Phi, _ = spectra.gl_solution(problem, state, xs)
        Psi, _ = spectra.marchenko_solution(problem, state, xs)
        den = max(np.abs(Psi).max(), 1e-300)
        worst["psi"] = max(worst["psi"], float(np.abs(Psi - Phi @ Dh).max() / den))
    rep.add("Penrose equalities (scaled)", pen, PENROSE_TOL, "Moore-Penrose inverse")
    rep.add("D^dag D = Q", worst["DhD"], D_TOL, "dependency matrix is a partial isometry")
    rep.add("D D^dag = P", worst["DDh"], D_TOL, "dependency matrix is a partial isometry")
    rep.add("D^+ = D^dag", worst["pinvD"], D_TOL, "dependency matrix is a partial isometry")
    rep.add("D D^dag D = D", worst["iso"], D_ISOMETRY_TOL, "partial isometry")
    rep.add("Psi_j = Phi_j D^dag", worst["psi"], SOLUTION_TOL, "Marchenko solution from Gel'fand-Levitan solution")
    rep.add("rank Q = rank P = m", worst["rank"], 0, "multiplicity consistency")
    ortho = spectra.orthonormality_residuals(problem, spectrum)
    rep.add("int Phi_j^dag Phi_l = delta_jl Q_j", ortho["gl"], ORTHO_TOL, "Gel'fand-Levitan orthonormality")
    rep.add("int Psi_j^dag Psi_l = delta_jl P_j", ortho["marchenko"], ORTHO_TOL, "Marchenko orthonormality")
    rep.info["kappas"] = list(spectrum.kappas)
    rep.info["multiplicities"] = [s.m for s in spectrum.states]
    return rep


def _complex_points(kappa: float, count: int = 10) -> np.ndarray:
    r = np.linspace(0.4, 3.0, count) * max(kappa, 0.5)
    return r * np.exp(1j * np.pi / 3)


def surgery_checks(result: surgery.SurgeryResult, level: str = "quick", spectrum_before: spectra.Spectrum | None = None) -> Report:
    """Identities that every surgery result must satisfy."""
    rep = Report("surgery")
    boundary_checks(rep, result.boundary_tilde, "transformed ")
    rep.add("Gel'fand-Levitan equation residual", surgery.gl_residual(result), GL_TOL, "Gel'fand-Levitan equation")

    nk = 5 if level == "quick" else 20
    kr = np.linspace(0.25, 4.0, nk)
    kc = _complex_points(result.kappa)
    ks = np.concatenate([kr, kc])
    J = jost_matrices(result.original, ks)
    Jt = jost_matrices(result.problem, ks)
    worst = 0.0
    for a, b in zip(J[:nk], Jt[:nk]):
        ref = a.conj().T @ a
        worst = max(worst, float(np.linalg.norm(b.conj().T @ b - ref, 2) / max(1.0, np.linalg.norm(ref, 2))))
    rep.add("J~^dag J~ = J^dag J on real k", worst, JOST_TOL, "continuous spectrum unchanged")
    det_err = 0.0
    for k, a, b in zip(kc, J[nk:], Jt[nk:]):
        ratio = np.linalg.det(b) / np.linalg.det(a)
        target = result.jost_factor.det(k)
        det_err = max(det_err, abs(ratio - target) / abs(target))
    rep.add("det J~ / det J = ((k + s i kappa)/(k - s i kappa))^m", det_err, DET_TOL, "determinant relation")
    fac = max(float(np.linalg.norm(b - result.jost_factor(k) @ a, 2) / max(1.0, np.linalg.norm(b, 2))) for k, a, b in zip(ks, J, Jt))
    rep.add("J~ = F(k) J (direct solve vs factor)", fac, JOST_TOL, "transformed Jost matrix")

    if level == "full":
        _plug_in(rep, result)
        _singularity(rep, result)
        _round_trip(rep, result, spectrum_before)
    return rep


def _plug_in(rep: Report, result: surgery.SurgeryResult, k: float = 1.3) -> None:
    """``phi~`` from the transformation against a direct solve of the transformed problem."""
    phi, dphi = result.phi_tilde(k)
    direct, ddirect, _ = regular_batch(result.problem, [k], result.xs)
    scale = max(1.0, np.abs(phi).max())
    resid = max(np.abs(direct[:, 0] - phi).max(), np.abs(ddirect[:, 0] - dphi).max()) / scale
    rep.add("phi~ solves the transformed equation", resid, PLUG_IN_TOL, "transformed regular solution")
    start = max(np.abs(phi[0] - result.boundary_tilde.A).max(), np.abs(dphi[0] - result.boundary_tilde.B).max())
    rep.add("phi~(0) = A~, phi~'(0) = B~", start, PLUG_IN_TOL, "transformed regular solution")


def _singularity(rep: Report, result: surgery.SurgeryResult) -> None:
    k = 1j * result.kappa
    a, _ = result.f_tilde(k * (1 + surgery.SINGULAR_SHIFT))
    b, _ = result.f_tilde(k * (1 - surgery.SINGULAR_SHIFT))
    diff = np.abs(a - b).max() / max(np.abs(a).max(), 1e-300)
    rep.add("f~ at i kappa (1 +- 1e-4) agree", diff, SINGULARITY_TOL, "removable singularity of f~")


def _round_trip(rep: Report, result: surgery.SurgeryResult, spectrum_before: spectra.Spectrum | None) -> None:
    """Undo the surgery and compare with the original; check untouched states."""
    original = result.original
    before = spectra.find_bound_states(original) if spectrum_before is None else spectrum_before
    after = spectra.find_bound_states(result.problem)
    others_before = [s for s in before.states if abs(s.kappa - result.kappa) > 1e-6 * max(1.0, result.kappa)]
    drift = 0.0
    for s in others_before:
        t = after.nearest(s.kappa)
        if t is None or abs(t.kappa - s.kappa) > 1e-6:
            drift = math.inf
            break
        drift = max(drift, float(np.linalg.norm(t.Q - s.Q, 2)), float(np.linalg.norm(t.C - s.C, 2)))
    rep.add("untouched states keep Q_j and C_j", drift, 1e-6, "other bound states unchanged")

    kind = result.plan.kind
    if kind == "add":
        back = surgery.apply_plan(result.problem, surgery.SurgeryPlan.remove(result.kappa), after)
    elif kind == "remove":
        state = before.nearest(result.kappa)
        back = surgery.solve_gl_add(result.problem, result.kappa, state.C, after)
    else:
        return
    sel = np.isin(back.xs, result.xs)
    nodes = back.xs[sel]
    dv = np.abs(back.problem.potential(nodes) - original.potential(nodes)).max()
    rep.add("round trip recovers V", dv, ROUND_TRIP_TOL, "inverse surgeries")
    db = max(np.abs(back.boundary_tilde.A - original.A).max(), np.abs(back.boundary_tilde.B - original.B).max())
    rep.add("round trip recovers (A, B)", db, BOUNDARY_ROUND_TRIP_TOL, "inverse surgeries")


def seeded_normalization(n: int, seed: int, scale: tuple[float, float] = (1.0, 3.0)) -> np.ndarray:
    """Random hermitian rank-one ``C = c v v^dag`` with unit complex ``v``."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    if n == 1:
        v = np.abs(v)
    v /= np.linalg.norm(v)
    c = rng.uniform(*scale)
    return c * np.outer(v, v.conj())


def _free_kappa(spectrum: spectra.Spectrum, start: float = 0.7) -> float:
    kappa = start
    while any(abs(kappa - k) < 0.05 for k in spectrum.kappas):
        kappa *= 1.37
    return kappa


def invariant_battery(target, level: str = "quick", seed: int = 0, spectrum: spectra.Spectrum | None = None) -> Report:
    """Run every applicable identity on a problem or a surgery result.

    For a :class:`Problem` the battery also performs seeded test surgeries
    (add a rank-one state; remove the first existing state) and checks them,
    including the bound-state identities of the problem with the added state.
    ``level="quick"`` uses coarser grids and skips re-detection round trips.
    ``spectrum`` overrides the detected bound states (for testing the checks).
    """
    if level not in ("quick", "full"):
        raise ValueError("level must be 'quick' or 'full'")
    t0 = time.perf_counter()
    rep = Report(f"battery-{level}")
    if isinstance(target, surgery.SurgeryResult):
        problem = target.problem
        rep.extend(surgery_checks(target, level), "surgery: ")
    elif isinstance(target, Problem):
        problem = target
    else:
        raise TypeError("invariant_battery needs a Problem or a SurgeryResult")
    boundary_checks(rep, problem.boundary)
    rep.extend(forward_checks(problem, level))
    spec = spectra.find_bound_states(problem) if spectrum is None else spectrum
    rep.extend(state_checks(problem, spec, level))
    if isinstance(target, Problem):
        detected = spectra.find_bound_states(problem) if spectrum is not None else spec
        kappa = _free_kappa(detected)
        C = seeded_normalization(problem.n, seed)
        added = surgery.solve_gl_add(problem, kappa, C, detected)
        rep.extend(surgery_checks(added, level, detected), f"add(kappa={kappa:.4g}): ")
        # the added state gives problems without bound states something to check
        rep.extend(state_checks(added.problem, spectra.find_bound_states(added.problem), level), f"add(kappa={kappa:.4g}) states: ")
        if detected.states:
            state = detected.states[0]
            removed = surgery.solve_gl_remove(problem, state)
            rep.extend(surgery_checks(removed, level, detected), f"remove(kappa={state.kappa:.6g}): ")
    rep.wall_time = time.perf_counter() - t0
    return rep


def run_suite(name: str, problem: Problem | None = None, level: str = "quick", threads: int | None = None) -> Report:
    """Dispatch used by the command line: ``golden``, ``battery`` or ``parseval``."""
    if name == "golden":
        return golden_example89()
    if problem is None:
        raise ValueError(f"suite {name!r} needs a problem")
    if name == "battery":
        return invariant_battery(problem, level)
    if name == "parseval":
        return parseval_smeared(problem, threads=threads)
    raise ValueError(f"unknown suite {name!r}; choose golden, battery or parseval")
