"""Dense convex quadratic programming with verifiable optimality diagnostics.

Problems are stated as

    minimize    0.5 u' W1 u + W2' u
    subject to  A_ineq u + b_ineq <= 0
                A_eq   u + b_eq   == 0

with ``W1`` symmetric positive definite. The solver is a primal-dual
interior-point method (Mehrotra predictor-corrector) followed by an
active-set polish that re-solves the equality-constrained problem on the
identified active set, which typically drives the first-order residuals to
machine precision. Everything is deterministic: no randomization, and a
fixed input always produces the same output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import NoirError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000
_SYM_TOL = 1e-12
_STALL_WINDOW = 30
_DUAL_BLOWUP = 1e8


class QpDimensionError(NoirError):
    """Cost and constraint blocks have inconsistent shapes."""


class QpNotConvexError(NoirError):
    """W1 is asymmetric or not positive definite."""

    def __init__(self, message: str, min_eigenvalue: float | None = None):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(message)


@dataclass(frozen=True)
class QpProblem:
    """Immutable problem data; empty constraint blocks use 0-row arrays."""

    w1: np.ndarray
    w2: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        n = self.w1.shape[0] if self.w1.ndim == 2 else -1
        if self.w1.ndim != 2 or self.w1.shape != (n, n):
            raise QpDimensionError(f"W1 must be square, got shape {self.w1.shape}")
        if self.w2.shape != (n,):
            raise QpDimensionError(f"W2 has shape {self.w2.shape}, expected ({n},)")
        if self.a_ineq.ndim != 2 or self.a_ineq.shape[1] != n:
            raise QpDimensionError(f"A_ineq has shape {self.a_ineq.shape}, expected (*, {n})")
        if self.b_ineq.shape != (self.a_ineq.shape[0],):
            raise QpDimensionError("b_ineq length does not match A_ineq rows")
        if self.a_eq.ndim != 2 or self.a_eq.shape[1] != n:
            raise QpDimensionError(f"A_eq has shape {self.a_eq.shape}, expected (*, {n})")
        if self.b_eq.shape != (self.a_eq.shape[0],):
            raise QpDimensionError("b_eq length does not match A_eq rows")

    @property
    def n(self) -> int:
        return self.w1.shape[0]

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.w1 @ u + self.w2 @ u)


def problem(w1, w2, a_ineq=None, b_ineq=None, a_eq=None, b_eq=None) -> QpProblem:
    """Convenience constructor that fills in empty constraint blocks."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float).reshape(-1)
    n = w2.shape[0]
    a_ineq = np.zeros((0, n)) if a_ineq is None else np.asarray(a_ineq, dtype=float)
    b_ineq = np.zeros(0) if b_ineq is None else np.asarray(b_ineq, dtype=float).reshape(-1)
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    return QpProblem(w1, w2, a_ineq, b_ineq, a_eq, b_eq)


@dataclass(frozen=True)
class KktResiduals:
    """Infinity norms of the first-order optimality residuals."""

    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_ineq, self.complementarity)


@dataclass(frozen=True)
class InfeasibilityCertificate:
    """Separating multipliers: lam >= 0 with A_ineq' lam + A_eq' nu ~ 0 and
    a strictly negative constraint gap, witnessing an empty feasible set."""

    lam: np.ndarray
    nu: np.ndarray
    support_residual: float
    gap: float


@dataclass(frozen=True)
class QpSolution:
    u_star: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "max_iter"
    kkt: KktResiduals
    iterations: int
    lam: np.ndarray
    nu: np.ndarray
    certificate: InfeasibilityCertificate | None = None


def _check_convexity(w1: np.ndarray) -> None:
    scale = max(1.0, np.abs(w1).max())
    if np.abs(w1 - w1.T).max() > _SYM_TOL * scale:
        raise QpNotConvexError("W1 is not symmetric")
    try:
        np.linalg.cholesky(w1)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(w1).min())
        raise QpNotConvexError(
            f"W1 is not positive definite (smallest eigenvalue ~ {min_eig:.3e})",
            min_eigenvalue=min_eig,
        ) from None


def _residuals(p: QpProblem, u: np.ndarray, lam: np.ndarray, nu: np.ndarray) -> KktResiduals:
    grad = p.w1 @ u + p.w2
    if p.a_ineq.shape[0]:
        grad = grad + p.a_ineq.T @ lam
    if p.a_eq.shape[0]:
        grad = grad + p.a_eq.T @ nu
    g_val = p.a_ineq @ u + p.b_ineq if p.a_ineq.shape[0] else np.zeros(0)
    eq_val = p.a_eq @ u + p.b_eq if p.a_eq.shape[0] else np.zeros(0)
    return KktResiduals(
        stationarity=float(np.abs(grad).max(initial=0.0)),
        primal_eq=float(np.abs(eq_val).max(initial=0.0)),
        primal_ineq=float(np.clip(g_val, 0.0, None).max(initial=0.0)),
        complementarity=float(np.abs(lam * g_val).max(initial=0.0)),
    )


def _solve_equality_qp(p: QpProblem, tol: float) -> QpSolution:
    """Closed-form KKT solve for problems without inequality rows."""
    n, m_eq = p.n, p.a_eq.shape[0]
    if m_eq == 0:
        u = np.linalg.solve(p.w1, -p.w2)
        nu = np.zeros(0)
    else:
        kkt = np.block([
            [p.w1, p.a_eq.T],
            [p.a_eq, np.zeros((m_eq, m_eq))],
        ])
        rhs = np.concatenate([-p.w2, -p.b_eq])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            # Rank-deficient equality block: consistent systems still solve;
            # inconsistent ones yield an infeasibility certificate.
            u_ls, *_ = np.linalg.lstsq(p.a_eq, -p.b_eq, rcond=None)
            resid = p.a_eq @ u_ls + p.b_eq
            if np.abs(resid).max(initial=0.0) > tol:
                nu_cert = resid / max(np.abs(resid).max(), 1e-300)
                cert = InfeasibilityCertificate(
                    lam=np.zeros(0),
                    nu=nu_cert,
                    support_residual=float(np.abs(p.a_eq.T @ nu_cert).max(initial=0.0)),
                    gap=float(-p.b_eq @ nu_cert),
                )
                bad = KktResiduals(np.inf, float(np.abs(resid).max()), 0.0, 0.0)
                return QpSolution(u_ls, p.objective(u_ls), "infeasible", bad, 0,
                                  np.zeros(0), nu_cert, cert)
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        u, nu = sol[:n], sol[n:]
    kkt_res = _residuals(p, u, np.zeros(0), nu)
    status = "optimal" if kkt_res.max <= tol else "max_iter"
    return QpSolution(u, p.objective(u), status, kkt_res, 0, np.zeros(0), nu)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping v + alpha dv nonnegative."""
    shrink = dv < 0
    if not shrink.any():
        return 1.0
    return float(min(1.0, (-v[shrink] / dv[shrink]).min()))


def _polish(p: QpProblem, u, lam, tol):
    """Re-solve on the active set; returns (u, lam, nu) or None."""
    n, m, m_eq = p.n, p.a_ineq.shape[0], p.a_eq.shape[0]
    g_val = p.a_ineq @ u + p.b_ineq
    slack = -g_val
    active = lam > slack
    for _ in range(4):
        ga = p.a_ineq[active]
        na = ga.shape[0]
        kkt = np.block([
            [p.w1, p.a_eq.T, ga.T],
            [p.a_eq, np.zeros((m_eq, m_eq)), np.zeros((m_eq, na))],
            [ga, np.zeros((na, m_eq)), np.zeros((na, na))],
        ])
        rhs = np.concatenate([-p.w2, -p.b_eq, -p.b_ineq[active]])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        u_p = sol[:n]
        nu_p = sol[n:n + m_eq]
        lam_act = sol[n + m_eq:]
        if (lam_act < -tol).any():
            drop = np.zeros(m, dtype=bool)
            drop[np.flatnonzero(active)[lam_act < -tol]] = True
            active &= ~drop
            continue
        lam_p = np.zeros(m)
        lam_p[active] = np.clip(lam_act, 0.0, None)
        g_new = p.a_ineq @ u_p + p.b_ineq
        if g_new.max(initial=0.0) > tol:
            return None
        return u_p, lam_p, nu_p
    return None


def solve(
    p: QpProblem,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    initial_guess: np.ndarray | None = None,
) -> QpSolution:
    """Solve a strictly convex QP.

    ``status == "optimal"`` guarantees every KKT residual is at most ``tol``.
    An infeasible problem yields ``status == "infeasible"`` together with a
    separating-multiplier certificate. ``initial_guess`` warm-starts the
    primal iterate; correctness never depends on it.
    """
    _check_convexity(p.w1)
    n, m, m_eq = p.n, p.a_ineq.shape[0], p.a_eq.shape[0]
    if m == 0:
        return _solve_equality_qp(p, tol)

    G, h = p.a_ineq, -p.b_ineq
    A, b = p.a_eq, -p.b_eq

    if initial_guess is not None and np.asarray(initial_guess).shape == (n,):
        u = np.asarray(initial_guess, dtype=float).copy()
    elif m_eq:
        start = np.linalg.lstsq(
            np.block([[p.w1, A.T], [A, np.zeros((m_eq, m_eq))]]),
            np.concatenate([-p.w2, b]),
            rcond=None,
        )[0]
        u = start[:n]
    else:
        u = np.linalg.solve(p.w1, -p.w2)

    s = np.maximum(h - G @ u, 1.0)
    lam = np.ones(m)
    nu = np.zeros(m_eq)

    best: tuple[float, np.ndarray, np.ndarray, np.ndarray] | None = None
    history: list[float] = []
    iterations = 0

    for iterations in range(1, max_iter + 1):
        r_d = p.w1 @ u + p.w2 + G.T @ lam + (A.T @ nu if m_eq else 0.0)
        r_p = A @ u - b if m_eq else np.zeros(0)
        r_s = G @ u + s - h
        mu = float(s @ lam) / m

        kkt_now = _residuals(p, u, lam, nu)
        if best is None or kkt_now.max < best[0]:
            best = (kkt_now.max, u.copy(), lam.copy(), nu.copy())
        history.append(kkt_now.max)
        if kkt_now.max <= tol:
            break

        # Infeasible problems drive the duals to infinity along a separating
        # direction; normalize and test it. A stalled iteration gets the
        # same test before giving up, since near-infeasible problems thrash
        # below the blow-up threshold.
        stalled = (
            len(history) > _STALL_WINDOW
            and history[-1] > 0.9 * history[-_STALL_WINDOW - 1]
        )
        dual_norm = max(np.abs(lam).max(initial=0.0), np.abs(nu).max(initial=0.0))
        if (dual_norm > _DUAL_BLOWUP or stalled) and dual_norm > 0.0:
            lam_n, nu_n = lam / dual_norm, nu / dual_norm
            support = np.abs(G.T @ lam_n + (A.T @ nu_n if m_eq else 0.0)).max()
            gap = float(h @ lam_n + (b @ nu_n if m_eq else 0.0))
            if support <= 1e-7 and gap < -1e-9:
                cert = InfeasibilityCertificate(lam_n, nu_n, float(support), gap)
                return QpSolution(u, p.objective(u), "infeasible", kkt_now,
                                  iterations, lam, nu, cert)
        if stalled:
            break

        # Guard the complementarity ratios: degenerate actives can drive
        # slacks to exact zero, which would put infs in the Newton system.
        s_safe = np.maximum(s, 1e-14)
        d = np.minimum(lam / s_safe, 1e14)
        kkt_mat = p.w1 + G.T @ (d[:, None] * G)
        kkt_mat[np.diag_indices(n)] += 1e-12 * max(1.0, np.abs(kkt_mat).max())
        if m_eq:
            kkt_mat = np.block([[kkt_mat, A.T], [A, np.zeros((m_eq, m_eq))]])
        try:
            lu = scipy.linalg.lu_factor(kkt_mat)
        except (np.linalg.LinAlgError, ValueError):
            break

        def newton_step(r_c):
            rhs = -(r_d + G.T @ (d * r_s - r_c / s_safe))
            if m_eq:
                rhs = np.concatenate([rhs, -r_p])
            sol = scipy.linalg.lu_solve(lu, rhs)
            du = sol[:n]
            dnu = sol[n:] if m_eq else np.zeros(0)
            dlam = d * (G @ du + r_s) - r_c / s_safe
            ds = -r_s - G @ du
            return du, dnu, dlam, ds

        try:
            # Predictor: pure Newton step toward the boundary.
            du_a, dnu_a, dlam_a, ds_a = newton_step(lam * s)
            alpha_p = _max_step(s, ds_a)
            alpha_d = _max_step(lam, dlam_a)
            mu_aff = float((s + alpha_p * ds_a) @ (lam + alpha_d * dlam_a)) / m
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

            # Corrector: recenter and compensate the predictor's second-order term.
            r_c = lam * s + dlam_a * ds_a - sigma * mu
            du, dnu, dlam, ds = newton_step(r_c)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            break
        if not (np.isfinite(du).all() and np.isfinite(dlam).all() and np.isfinite(ds).all()):
            break
        alpha_p = 0.99 * _max_step(s, ds)
        alpha_d = 0.99 * _max_step(lam, dlam)

        u = u + alpha_p * du
        s = np.maximum(s + alpha_p * ds, 1e-300)
        lam = np.maximum(lam + alpha_d * dlam, 1e-300)
        if m_eq:
            nu = nu + alpha_d * dnu

    _, u, lam, nu = best if best is not None else (0.0, u, lam, nu)
    polished = _polish(p, u, lam, tol)
    if polished is not None:
        u_p, lam_p, nu_p = polished
        if _residuals(p, u_p, lam_p, nu_p).max <= _residuals(p, u, lam, nu).max:
            u, lam, nu = u_p, lam_p, nu_p

    kkt_final = _residuals(p, u, lam, nu)
    status = "optimal" if kkt_final.max <= tol else "max_iter"
    return QpSolution(u, p.objective(u), status, kkt_final, iterations, lam, nu)


def check_kkt(p: QpProblem, u, active_tol: float = 1e-6) -> KktResiduals:
    """First-order residuals at ``u`` with multipliers recovered from scratch.

    Multipliers are fit by nonnegative least squares over the constraints
    active at ``u`` (within ``active_tol``), so the result is independent of
    any solver state. Pure function.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (p.n,):
        raise QpDimensionError(f"point has shape {u.shape}, expected ({p.n},)")
    m, m_eq = p.a_ineq.shape[0], p.a_eq.shape[0]

    g_val = p.a_ineq @ u + p.b_ineq if m else np.zeros(0)
    active = np.flatnonzero(g_val >= -active_tol * (1.0 + np.abs(p.b_ineq))) if m else np.zeros(0, int)

    grad = p.w1 @ u + p.w2
    columns = []
    if active.size:
        columns.append(p.a_ineq[active].T)
    if m_eq:
        columns.append(p.a_eq.T)
        columns.append(-p.a_eq.T)
    lam = np.zeros(m)
    nu = np.zeros(m_eq)
    if columns:
        stacked = np.hstack(columns)
        coef, _ = scipy.optimize.nnls(stacked, -grad)
        if active.size:
            lam[active] = coef[:active.size]
        if m_eq:
            pos = coef[active.size:active.size + m_eq]
            neg = coef[active.size + m_eq:]
            nu = pos - neg
    return _residuals(p, u, lam, nu)
