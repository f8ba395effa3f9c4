"""Reduced linear dynamics x[k+1] = A x + B s and the stacked horizon model.

``A = (I - P)(I - QP)^-1`` acts on interior densities; ``B`` couples the
boundary flow vector ``s`` (inlet admissions first, outlet releases after)
into the interior roads adjacent to the boundary. The horizon model stacks
``X = G x + H U`` with ``G`` holding successive powers of ``A`` and ``H``
block lower-triangular in ``A^t B``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError
from .graph import NoirGraph
from .probability import ProbabilityModel, TrafficState, _interior_vector, compute_outflow

ASSEMBLY_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class StateSpace:
    """System matrix ``a`` (n_interior square, nonnegative, spectral radius
    below one for valid models) and input matrix ``b`` with entries in
    {-1, 0, +1}: +1 where a boundary road feeds the interior road, -1 where
    the interior road empties into one."""

    a: np.ndarray
    b: np.ndarray

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_controls(self) -> int:
        return self.b.shape[1]


def assemble(g: NoirGraph, m: ProbabilityModel, *, scaled_inlet_columns: bool = False) -> StateSpace:
    """Build the step dynamics from a sampled model.

    ``A`` is computed by solving (I - QP)^T A^T = (I - P)^T column by column,
    never by explicit inversion, and the solve is rejected when its residual
    exceeds ``ASSEMBLY_RESIDUAL_TOL``.

    ``scaled_inlet_columns`` is a compatibility switch: when set, the +1
    entries for inlet-fed roads are replaced by that inlet's routing fraction
    toward the road. Off by default; the two agree whenever every inlet has a
    single out-neighbor.
    """
    n = g.n_interior
    qp = m.qp_matrix()
    i_minus_qp = np.eye(n) - qp
    i_minus_p = np.diag(1.0 - m.p)
    try:
        a = np.linalg.solve(i_minus_qp.T, i_minus_p.T).T
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            "(I - QP) is singular; cannot assemble the system matrix"
        ) from exc

    residual = np.abs(a @ i_minus_qp - i_minus_p).max()
    if not residual <= ASSEMBLY_RESIDUAL_TOL:
        raise ConditioningError(
            f"system-matrix solve residual {residual:.3e} exceeds {ASSEMBLY_RESIDUAL_TOL:.1e}; "
            "the sampled model is too close to singular"
        )

    b = np.zeros((n, g.n_boundary))
    for gi in g.interior:
        row = g.interior_index(gi)
        for j in g.in_list(gi):
            if not g.is_interior(j):
                b[row, j - 1] += m.q[(gi, j)] if scaled_inlet_columns else 1.0
        for j in g.out_list(gi):
            if not g.is_interior(j):
                b[row, j - 1] -= 1.0
    return StateSpace(a=a, b=b)


def spectral_radius(M: np.ndarray, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Largest eigenvalue modulus.

    Power iteration from a deterministic start vector; falls back to a dense
    eigenvalue solve when the growth-rate estimate fails to settle (complex
    dominant pairs make the iteration oscillate).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    n = M.shape[0]
    if n == 0:
        return 0.0

    v = np.ones(n) / np.sqrt(n)
    estimate = 0.0
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_estimate = norm / np.linalg.norm(v)
        v = w / norm
        if abs(new_estimate - estimate) <= tol * max(1.0, new_estimate):
            # One confirmation pass guards against momentary agreement.
            w2 = M @ v
            confirm = np.linalg.norm(w2)
            if abs(confirm - new_estimate) <= tol * max(1.0, confirm):
                return float(confirm)
        estimate = new_estimate

    return float(np.abs(np.linalg.eigvals(M)).max())


@dataclass(frozen=True)
class PredictionModel:
    """Stacked horizon model X = G x + H U.

    ``g_stack`` holds A, A^2, ..., A^horizon as stacked row blocks; ``h``
    has block (r, c) equal to A^(r-c) B for r >= c and zero above the block
    diagonal.
    """

    g_stack: np.ndarray
    h: np.ndarray
    horizon: int
    n_states: int
    n_controls: int


def build_prediction(ss: StateSpace, horizon: int) -> PredictionModel:
    """Stack the horizon model, computing each power incrementally."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    n, nb = ss.n_states, ss.n_controls

    g_stack = np.zeros((n * horizon, n))
    h = np.zeros((n * horizon, nb * horizon))

    a_power = ss.a.copy()          # A^(r+1) for row block r
    ab_blocks = [ss.b.copy()]      # A^t B for t = 0..horizon-1
    for r in range(horizon):
        g_stack[r * n:(r + 1) * n] = a_power
        if r + 1 < horizon:
            a_power = ss.a @ a_power
            ab_blocks.append(ss.a @ ab_blocks[-1])
    for r in range(horizon):
        for c in range(r + 1):
            h[r * n:(r + 1) * n, c * nb:(c + 1) * nb] = ab_blocks[r - c]

    g_stack.setflags(write=False)
    h.setflags(write=False)
    return PredictionModel(g_stack=g_stack, h=h, horizon=horizon, n_states=n, n_controls=nb)


def propagate(ss: StateSpace, x, s) -> TrafficState:
    """One step of the linear dynamics: A x + B s."""
    xv = _interior_vector(x, ss.n_states)
    sv = np.asarray(s, dtype=float)
    if sv.shape != (ss.n_controls,):
        raise ValueError(f"control vector has shape {sv.shape}, expected ({ss.n_controls},)")
    new_x = ss.a @ xv + ss.b @ sv
    boundary = x.boundary.copy() if isinstance(x, TrafficState) else np.zeros(ss.n_controls)
    return TrafficState(x=new_x, boundary=boundary)


def elementwise_propagate(g: NoirGraph, m: ProbabilityModel, x, s) -> TrafficState:
    """Per-road mass-balance update, as an independent check of :func:`propagate`.

    Each interior road keeps the share (1 - p_i) of its current vehicles plus
    arrivals, where arrivals sum q[i, j] * z_j over in-neighbors j with
    z_j = u_j for inlets and the fixed-point outflow for interior roads.
    Matches the matrix path exactly when boundary flow is zero; with nonzero
    boundary flow the two differ by construction (the matrix form couples
    boundary flows through unit entries, outside the retention factor).
    """
    xv = _interior_vector(x, g.n_interior)
    sv = np.asarray(s, dtype=float)
    if sv.shape != (g.n_boundary,):
        raise ValueError(f"control vector has shape {sv.shape}, expected ({g.n_boundary},)")

    z = compute_outflow(m, xv)
    new_x = np.empty_like(xv)
    for gi in g.interior:
        row = g.interior_index(gi)
        arriving = 0.0
        for j in g.in_list(gi):
            if g.is_inlet(j):
                arriving += m.q[(gi, j)] * sv[j - 1]
            else:
                arriving += m.q[(gi, j)] * z[g.interior_index(j)]
        new_x[row] = (1.0 - m.p[row]) * (xv[row] + arriving)

    boundary = x.boundary.copy() if isinstance(x, TrafficState) else np.zeros(g.n_boundary)
    return TrafficState(x=new_x, boundary=boundary)
