"""Boundary-flow controller: builds the horizon QP and extracts one step.

At every step the controller minimizes

    0.5 * (||U||^2 + beta * ||X||^2),   X = G x + H U

over the stacked boundary-flow vector ``U``, subject to nonnegative flows,
a fixed per-step crossing budget ``d0``, and per-road density bounds
``0 <= X <= x_max`` over the whole horizon. The first block of the optimal
``U`` is applied to the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qp
from .errors import NoirError
from .probability import _interior_vector
from .statespace import PredictionModel

BUDGET_TOL = 1e-8
_FALLBACK_ATTEMPTS = 4


@dataclass(frozen=True)
class MpcConfig:
    """Controller knobs.

    ``x_max`` is the per-road capacity vector over interior roads (state
    order). Density nonnegativity is guaranteed by nonnegative flows under
    the per-road retention dynamics, so the lower density rows are redundant
    and omitted by default; ``enforce_nonnegative_density`` adds them back,
    which makes outlet releases hard-limited by upstream availability over
    the whole horizon (a much more conservative controller).
    ``infeasibility_fallback`` retries an infeasible step with the budget
    halved, up to four times.
    """

    beta: float
    d0: float
    horizon: int
    x_max: np.ndarray
    infeasibility_fallback: bool = False
    enforce_nonnegative_density: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        x_max = np.asarray(self.x_max, dtype=float)
        if x_max.ndim != 1 or (x_max <= 0).any():
            raise ValueError("x_max must be a positive vector")
        if not np.isfinite(x_max).all():
            raise ValueError("x_max must be finite for every interior road")
        object.__setattr__(self, "x_max", x_max)


@dataclass(frozen=True)
class BoundaryControl:
    """One step's boundary flows: inlet admissions ``u`` (first ``n_in``
    entries) then outlet releases ``v``, all nonnegative, summing to the
    step budget."""

    s: np.ndarray
    n_in: int

    @property
    def u(self) -> np.ndarray:
        return self.s[:self.n_in]

    @property
    def v(self) -> np.ndarray:
        return self.s[self.n_in:]


@dataclass(frozen=True)
class MpcStepResult:
    control: BoundaryControl
    predicted: np.ndarray      # (horizon, n_interior) density trajectory
    objective: float           # QP objective (state-independent constant dropped)
    solution: qp.QpSolution
    d0_used: float


class MpcInfeasibleError(NoirError):
    """The step QP has no feasible boundary flow.

    ``certificate`` carries the separating multipliers; ``binding`` lists the
    inequality rows supporting them (largest multipliers first).
    """

    def __init__(self, message: str, certificate, binding: list[int]):
        self.certificate = certificate
        self.binding = binding
        super().__init__(message)


class MpcSolverError(NoirError):
    """The QP solver stopped without reaching the optimality tolerance."""


def build_cost(pm: PredictionModel, x, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic cost blocks: W1 = I + beta H'H, W2 = beta H'G x.

    ``beta == 0`` returns exactly the identity and a zero vector.
    """
    n_u = pm.n_controls * pm.horizon
    if beta == 0:
        return np.eye(n_u), np.zeros(n_u)
    xv = _interior_vector(x, pm.n_states)
    w1 = np.eye(n_u) + beta * (pm.h.T @ pm.h)
    w1 = 0.5 * (w1 + w1.T)
    w2 = beta * (pm.h.T @ (pm.g_stack @ xv))
    return w1, w2


def build_constraints(
    pm: PredictionModel, x, cfg: MpcConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Linear constraint blocks for the horizon QP.

    Inequalities: -U <= 0 and H U <= tile(x_max) - G x (plus -H U <= G x
    when the config asks for explicit lower density rows). Equalities: each
    horizon step's flows sum to ``d0``.
    """
    if cfg.x_max.shape != (pm.n_states,):
        raise ValueError(
            f"x_max has shape {cfg.x_max.shape}, expected ({pm.n_states},)"
        )
    xv = _interior_vector(x, pm.n_states)
    n_u = pm.n_controls * pm.horizon
    gx = pm.g_stack @ xv
    x_max_stacked = np.tile(cfg.x_max, pm.horizon)

    blocks_a = [-np.eye(n_u), pm.h]
    blocks_b = [np.zeros(n_u), gx - x_max_stacked]
    if cfg.enforce_nonnegative_density:
        blocks_a.append(-pm.h)
        blocks_b.append(-gx)
    a_ineq = np.vstack(blocks_a)
    b_ineq = np.concatenate(blocks_b)

    a_eq = np.kron(np.eye(pm.horizon), np.ones((1, pm.n_controls)))
    b_eq = np.full(pm.horizon, -cfg.d0)
    return a_ineq, b_ineq, a_eq, b_eq


def step(
    pm: PredictionModel,
    x,
    cfg: MpcConfig,
    n_in: int,
    *,
    warm_start: np.ndarray | None = None,
    tol: float = qp.DEFAULT_TOL,
) -> MpcStepResult:
    """Solve the horizon QP at state ``x`` and extract the first flow block.

    Raises :class:`MpcInfeasibleError` when no feasible flow exists (unless
    the fallback is enabled, in which case the budget is halved and retried).
    """
    xv = _interior_vector(x, pm.n_states)
    w1, w2 = build_cost(pm, xv, cfg.beta)

    d0 = cfg.d0
    attempts = _FALLBACK_ATTEMPTS if cfg.infeasibility_fallback else 0
    last_infeasible = None
    for _ in range(attempts + 1):
        a_ineq, b_ineq, a_eq, b_eq = build_constraints(pm, xv, _with_d0(cfg, d0))
        prob = qp.QpProblem(w1, w2, a_ineq, b_ineq, a_eq, b_eq)
        sol = qp.solve(prob, tol=tol, initial_guess=warm_start)
        if sol.status == "optimal":
            s_vec = sol.u_star[:pm.n_controls].copy()
            total = s_vec.sum()
            if abs(total - d0) > BUDGET_TOL * max(1.0, d0):
                raise MpcSolverError(
                    f"optimal step violates the crossing budget: sum={total!r}, d0={d0!r}"
                )
            predicted = (pm.g_stack @ xv + pm.h @ sol.u_star).reshape(pm.horizon, pm.n_states)
            control = BoundaryControl(s=np.clip(s_vec, 0.0, None), n_in=n_in)
            return MpcStepResult(
                control=control,
                predicted=predicted,
                objective=sol.objective,
                solution=sol,
                d0_used=d0,
            )
        if sol.status == "infeasible":
            last_infeasible = sol
            d0 = 0.5 * d0
            continue
        raise MpcSolverError(
            f"QP solver stopped with status {sol.status!r} "
            f"(max residual {sol.kkt.max:.3e} after {sol.iterations} iterations)"
        )

    cert = last_infeasible.certificate if last_infeasible else None
    binding: list[int] = []
    if cert is not None and cert.lam.size:
        order = np.argsort(-cert.lam)
        binding = [int(i) for i in order if cert.lam[i] > 1e-6 * cert.lam.max()]
    raise MpcInfeasibleError(
        "boundary-flow QP is infeasible at the current state", cert, binding
    )


def _with_d0(cfg: MpcConfig, d0: float) -> MpcConfig:
    return MpcConfig(
        beta=cfg.beta,
        d0=d0,
        horizon=cfg.horizon,
        x_max=cfg.x_max,
        infeasibility_fallback=cfg.infeasibility_fallback,
        enforce_nonnegative_density=cfg.enforce_nonnegative_density,
    )
