"""Per-step stochastic flow parameters and network inflow/outflow vectors.

Each simulation step draws, for every interior road, a departure fraction
``p_i`` in [0, 1) (the share of a road's current plus arriving vehicles that
leaves during the step) and, for every non-outlet road ``j``, routing
fractions ``q[i, j]`` over its out-neighbors that sum to one. ``P`` is the
diagonal matrix of departure fractions and ``Q`` the interior-to-interior
routing matrix; both are indexed in interior state order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError
from .graph import NoirGraph
from .seeding import TAG_INIT, TAG_P, TAG_Q, keyed_rng

FRACTION_SUM_TOL = 1e-12


@dataclass
class TrafficState:
    """Vehicle counts: ``x`` over interior roads (state order), ``boundary``
    over roads 1..n_out_end (held constant by the dynamics)."""

    x: np.ndarray
    boundary: np.ndarray

    def copy(self) -> "TrafficState":
        return TrafficState(self.x.copy(), self.boundary.copy())


def initial_state(g: NoirGraph, seed: int, max_fraction: float = 0.5) -> TrafficState:
    """Seeded random initial densities, uniform in [0, max_fraction * rho_max]."""
    if not 0.0 <= max_fraction <= 1.0:
        raise ValueError("max_fraction must lie in [0, 1]")
    rng = keyed_rng(seed, TAG_INIT)
    x = rng.uniform(0.0, max_fraction * g.x_max)
    return TrafficState(x=x, boundary=np.zeros(g.n_boundary))


def _interior_vector(x, n: int) -> np.ndarray:
    vec = x.x if isinstance(x, TrafficState) else np.asarray(x, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"state vector has shape {vec.shape}, expected ({n},)")
    return vec


@dataclass(frozen=True)
class ProbabilityModel:
    """One step's departure fractions and routing fractions.

    ``q`` maps ``(i, j) -> fraction`` for every edge ``(j, i)`` whose origin
    ``j`` is not an outlet; for each such ``j`` the fractions over its
    out-neighbors sum to one. ``Q[a, b]`` is the interior-to-interior block,
    ``a``/``b`` 0-based interior indices. Immutable after construction.
    """

    n_out_end: int
    p: np.ndarray
    q: dict[tuple[int, int], float]
    Q: np.ndarray = field(repr=False)

    @property
    def n_interior(self) -> int:
        return self.p.shape[0]

    @property
    def P(self) -> np.ndarray:
        return np.diag(self.p)

    def qp_matrix(self) -> np.ndarray:
        """The product Q @ P (column j of Q scaled by p_j)."""
        return self.Q * self.p[None, :]


def model_from_fractions(g: NoirGraph, p, q: dict[tuple[int, int], float]) -> ProbabilityModel:
    """Assemble and check a model from explicit fractions.

    ``p`` is a vector over interior roads in state order; ``q`` keys are
    ``(to_road, from_road)`` global ids covering exactly the edges leaving
    non-outlet roads.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (g.n_interior,):
        raise ValueError(f"p has shape {p.shape}, expected ({g.n_interior},)")
    if ((p < 0) | (p >= 1)).any():
        raise ValueError("departure fractions must lie in [0, 1)")

    expected = {(b, a) for a, b in g.edges if not g.is_outlet(a)}
    if set(q) != expected:
        missing = expected - set(q)
        extra = set(q) - expected
        raise ValueError(f"routing fractions mismatch: missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]}")

    for j in range(1, g.n_total + 1):
        if g.is_outlet(j):
            continue
        targets = g.out_list(j)
        if not targets:
            continue
        total = sum(q[(i, j)] for i in targets)
        if any(q[(i, j)] < 0 for i in targets):
            raise ValueError(f"negative routing fraction leaving road {j}")
        if abs(total - 1.0) > FRACTION_SUM_TOL:
            raise ValueError(f"routing fractions leaving road {j} sum to {total!r}, not 1")

    off = g.n_out_end
    Q = np.zeros((g.n_interior, g.n_interior))
    for (i, j), frac in q.items():
        if g.is_interior(i) and g.is_interior(j):
            Q[i - off - 1, j - off - 1] = frac
    Q.setflags(write=False)
    p.setflags(write=False)
    return ProbabilityModel(n_out_end=g.n_out_end, p=p, q=dict(q), Q=Q)


def sample(
    g: NoirGraph,
    seed: int,
    step: int,
    p_range: tuple[float, float] = (0.05, 0.95),
) -> ProbabilityModel:
    """Draw one step's model, keyed by ``(seed, step, road)``.

    Departure fractions are uniform on ``p_range``; routing fractions over
    each road's out-neighbors are uniform on the simplex (flat Dirichlet).
    Deterministic for a fixed key, and independent of sampling order.
    """
    lo, hi = p_range
    if not (0.0 <= lo <= hi < 1.0):
        raise ValueError(f"invalid p_range {p_range!r}: need 0 <= lo <= hi < 1")

    p = np.empty(g.n_interior)
    for i in g.interior:
        p[g.interior_index(i)] = keyed_rng(seed, step, i, TAG_P).uniform(lo, hi)

    q: dict[tuple[int, int], float] = {}
    for j in range(1, g.n_total + 1):
        if g.is_outlet(j):
            continue
        targets = g.out_list(j)
        if not targets:
            continue
        if len(targets) == 1:
            q[(targets[0], j)] = 1.0
            continue
        w = keyed_rng(seed, step, j, TAG_Q).dirichlet(np.ones(len(targets)))
        w = w / w.sum()
        for i, frac in zip(targets, w):
            q[(i, j)] = float(frac)

    return model_from_fractions(g, p, q)


def compute_inflow(m: ProbabilityModel, x) -> np.ndarray:
    """Interior inflow vector: the unique fixed point of y = QP (x + y).

    Solved as the linear system (I - QP) y = QP x; never forms an inverse.
    """
    xv = _interior_vector(x, m.n_interior)
    qp = m.qp_matrix()
    try:
        y = np.linalg.solve(np.eye(m.n_interior) - qp, qp @ xv)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            "(I - QP) is singular; the sampled model violates the spectral-radius premise"
        ) from exc
    return y


def compute_outflow(m: ProbabilityModel, x) -> np.ndarray:
    """Interior outflow vector z = P (x + y)."""
    xv = _interior_vector(x, m.n_interior)
    return m.p * (xv + compute_inflow(m, xv))


def neumann_partial_inverse(M: np.ndarray, terms: int) -> np.ndarray:
    """Partial geometric-series inverse: sum of M^h for h = 0..terms.

    Converges to (I - M)^-1 when the spectral radius of M is below one.
    Used as an independent cross-check of linear solves.
    """
    M = np.asarray(M, dtype=float)
    acc = np.eye(M.shape[0])
    power = np.eye(M.shape[0])
    for _ in range(terms):
        power = power @ M
        acc = acc + power
    return acc
