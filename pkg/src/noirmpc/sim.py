"""Closed-loop simulation: sample, assemble, control, propagate, record.

Every step draws a fresh flow model, rebuilds the step dynamics, solves the
boundary-flow QP, and advances the state. Runs are bit-reproducible for a
fixed configuration: all randomness is keyed by the run seed and the step
index, and the trace CSV is written with deterministic float formatting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import mpc
from .errors import InvariantBreachError, SimulationError
from .graph import NoirGraph, generate_grid, load_noir_file, validate
from .probability import ProbabilityModel, initial_state, sample
from .statespace import assemble, build_prediction, propagate, spectral_radius

STATE_DUST = 1e-6

CSV_HEADER = "k,road_or_flow_id,kind,value"
KIND_DENSITY = "density"
KIND_INFLOW = "inflow_u"
KIND_OUTFLOW = "outflow_v"
KIND_OBJECTIVE = "objective"
KIND_SUM_U = "rho_sum_u"
KIND_SUM_V = "rho_sum_v"
KIND_RADIUS = "spectral_radius"
AGGREGATE_ID = "all"


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    inlets: int
    outlets: int
    length_range_m: tuple[float, float] | None = None
    lanes_choices: tuple[int, ...] | None = None


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to reproduce a run. Exactly one of ``network_file``
    or ``grid`` selects the network."""

    seed: int
    steps: int
    beta: float
    d0: float
    horizon: int = 5
    network_file: str | None = None
    grid: GridSpec | None = None
    p_range: tuple[float, float] = (0.05, 0.95)
    initial_max_fraction: float = 0.25
    vehicle_length_m: float = 4.5
    retain_models: bool = True
    infeasibility_fallback: bool = False

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if (self.network_file is None) == (self.grid is None):
            raise ValueError("exactly one of network_file or grid must be set")


@dataclass
class SimulationTrace:
    """Complete run record.

    ``states`` has ``steps + 1`` rows (row 0 is the initial state);
    ``controls`` has one row per step; ``controls[k - 1]`` produced
    ``states[k]``. ``models`` is kept only when the run retains them.
    """

    config: SimulationConfig
    n_in: int
    n_out_end: int
    interior_ids: tuple[int, ...]
    x_max: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    sum_u: np.ndarray
    sum_v: np.ndarray
    objective: np.ndarray
    qp_status: tuple[str, ...]
    qp_iterations: np.ndarray
    kkt_max: np.ndarray
    radius_a: np.ndarray
    d0_used: np.ndarray
    floor_added: np.ndarray
    cap_removed: np.ndarray
    stimulus_max: float
    wall_time_s: float
    models: list[ProbabilityModel] | None = None

    @property
    def steps(self) -> int:
        return self.controls.shape[0]

    def bibo_bound(self) -> tuple[float, float]:
        """(max_k ||x[k]||^2, bound) using the observed worst-case stimulus
        and the largest system-matrix spectral radius of the run."""
        worst = float((self.states ** 2).sum(axis=1).max())
        r_hat = float(self.radius_a.max()) if self.radius_a.size else 0.0
        n = self.states.shape[1]
        bound = self.stimulus_max ** 2 * n / max(1.0 - r_hat, 1e-300)
        return worst, bound


def load_network(cfg: SimulationConfig) -> NoirGraph:
    if cfg.network_file is not None:
        return load_noir_file(cfg.network_file, vehicle_length_m=cfg.vehicle_length_m)
    spec = cfg.grid
    extras = {}
    if spec.length_range_m is not None:
        extras["length_range_m"] = spec.length_range_m
    if spec.lanes_choices is not None:
        extras["lanes_choices"] = spec.lanes_choices
    return generate_grid(
        spec.rows, spec.cols, spec.inlets, spec.outlets, cfg.seed,
        vehicle_length_m=cfg.vehicle_length_m, **extras,
    )


def _settle_state(
    x_vec: np.ndarray, x_max: np.ndarray, step_index: int
) -> tuple[np.ndarray, float, float]:
    """Settle a propagated state into [0, x_max].

    The linear step couples outlet releases through unit entries, so it can
    overdraw a road below zero when a release exceeds what is physically
    present; the floor models "you cannot extract what is not there" and the
    amount added back is returned for exact mass accounting. The upper bound
    is enforced by the controller's cap rows, so anything beyond numerical
    dust above ``x_max`` is an invariant breach.
    """
    high = (x_vec - x_max).max(initial=0.0)
    if high > STATE_DUST:
        raise InvariantBreachError(
            f"step {step_index}: state exceeded x_max by {high:.3e} "
            "despite the controller's density caps"
        )
    floored = np.clip(x_vec, 0.0, None)
    floor_added = float(floored.sum() - x_vec.sum())
    settled = np.minimum(floored, x_max)
    cap_removed = float(floored.sum() - settled.sum())
    return settled, floor_added, cap_removed


def run(cfg: SimulationConfig, g: NoirGraph | None = None) -> SimulationTrace:
    """Execute the closed loop for ``cfg.steps`` steps."""
    started = time.perf_counter()
    if g is None:
        g = load_network(cfg)
    report = validate(g)
    if not report.ok:
        rules = ", ".join(sorted({v.rule for v in report.violations}))
        raise SimulationError(f"network failed validation: {rules}")
    if g.n_boundary < 1:
        raise SimulationError("closed networks have no boundary flows to control")

    controller = mpc.MpcConfig(
        beta=cfg.beta,
        d0=cfg.d0,
        horizon=cfg.horizon,
        x_max=g.x_max.copy(),
        infeasibility_fallback=cfg.infeasibility_fallback,
    )

    state = initial_state(g, cfg.seed, cfg.initial_max_fraction)
    n_int, n_b = g.n_interior, g.n_boundary
    states = np.zeros((cfg.steps + 1, n_int))
    states[0] = state.x
    controls = np.zeros((cfg.steps, n_b))
    objective = np.zeros(cfg.steps)
    qp_iterations = np.zeros(cfg.steps, dtype=int)
    kkt_max = np.zeros(cfg.steps)
    radius_a = np.zeros(cfg.steps)
    d0_used = np.zeros(cfg.steps)
    floor_added = np.zeros(cfg.steps)
    cap_removed = np.zeros(cfg.steps)
    statuses: list[str] = []
    models: list[ProbabilityModel] | None = [] if cfg.retain_models else None

    stimulus = float(state.x.max(initial=0.0))
    warm: np.ndarray | None = None

    for k in range(1, cfg.steps + 1):
        model = sample(g, cfg.seed, k, cfg.p_range)
        ss = assemble(g, model)
        pm = build_prediction(ss, cfg.horizon)
        try:
            result = mpc.step(pm, state, controller, g.n_in, warm_start=warm)
        except mpc.MpcInfeasibleError as exc:
            raise SimulationError(f"step {k}: {exc}") from exc
        except mpc.MpcSolverError as exc:
            raise InvariantBreachError(f"step {k}: {exc}") from exc

        s_vec = result.control.s
        nxt = propagate(ss, state, s_vec)
        nxt.x, floor_added[k - 1], cap_removed[k - 1] = _settle_state(nxt.x, g.x_max, k)

        states[k] = nxt.x
        controls[k - 1] = s_vec
        objective[k - 1] = result.objective
        statuses.append(result.solution.status)
        qp_iterations[k - 1] = result.solution.iterations
        kkt_max[k - 1] = result.solution.kkt.max
        radius_a[k - 1] = spectral_radius(ss.a)
        d0_used[k - 1] = result.d0_used
        stimulus = max(stimulus, float((ss.b @ s_vec).max(initial=0.0)))
        if models is not None:
            models.append(model)
        warm = result.solution.u_star
        state = nxt

    return SimulationTrace(
        config=cfg,
        n_in=g.n_in,
        n_out_end=g.n_out_end,
        interior_ids=tuple(g.interior),
        x_max=g.x_max.copy(),
        states=states,
        controls=controls,
        sum_u=controls[:, :g.n_in].sum(axis=1),
        sum_v=controls[:, g.n_in:].sum(axis=1),
        objective=objective,
        qp_status=tuple(statuses),
        qp_iterations=qp_iterations,
        kkt_max=kkt_max,
        radius_a=radius_a,
        d0_used=d0_used,
        floor_added=floor_added,
        cap_removed=cap_removed,
        stimulus_max=stimulus,
        wall_time_s=time.perf_counter() - started,
        models=models,
    )


def run_open_loop(
    g: NoirGraph,
    seed: int,
    steps: int,
    p_range: tuple[float, float] = (0.05, 0.95),
    initial_max_fraction: float = 0.5,
    x0: np.ndarray | None = None,
) -> SimulationTrace:
    """Propagate with zero boundary flow; useful for conservation studies on
    closed or partially closed networks. Skips validation and control."""
    started = time.perf_counter()
    state = initial_state(g, seed, initial_max_fraction)
    if x0 is not None:
        state.x = np.asarray(x0, dtype=float).copy()
    n_int, n_b = g.n_interior, g.n_boundary
    states = np.zeros((steps + 1, n_int))
    states[0] = state.x
    radius_a = np.zeros(steps)
    models: list[ProbabilityModel] = []
    zero = np.zeros(n_b)

    for k in range(1, steps + 1):
        model = sample(g, seed, k, p_range)
        ss = assemble(g, model)
        state = propagate(ss, state, zero)
        states[k] = state.x
        radius_a[k - 1] = spectral_radius(ss.a)
        models.append(model)

    cfg = SimulationConfig(
        seed=seed, steps=steps, beta=0.0, d0=1.0,
        network_file="<open-loop>", p_range=p_range,
        initial_max_fraction=initial_max_fraction,
    )
    return SimulationTrace(
        config=cfg,
        n_in=g.n_in,
        n_out_end=g.n_out_end,
        interior_ids=tuple(g.interior),
        x_max=g.x_max.copy(),
        states=states,
        controls=np.zeros((steps, n_b)),
        sum_u=np.zeros(steps),
        sum_v=np.zeros(steps),
        objective=np.zeros(steps),
        qp_status=tuple("open-loop" for _ in range(steps)),
        qp_iterations=np.zeros(steps, dtype=int),
        kkt_max=np.zeros(steps),
        radius_a=radius_a,
        d0_used=np.zeros(steps),
        floor_added=np.zeros(steps),
        cap_removed=np.zeros(steps),
        stimulus_max=float(states[0].max(initial=0.0)),
        wall_time_s=time.perf_counter() - started,
        models=models,
    )


# -- steady-state detection -------------------------------------------------


def steady_state_index(
    sum_u: np.ndarray, sum_v: np.ndarray, window: int, tol: float
) -> int | None:
    """First step index (1-based) where both aggregate series hold steady.

    A window is steady when its max-min spread is within ``tol`` of its mean.
    Returns None when no window qualifies.
    """
    sum_u = np.asarray(sum_u, dtype=float)
    sum_v = np.asarray(sum_v, dtype=float)
    k_max = sum_u.shape[0]
    if window < 1 or window > k_max:
        raise ValueError(f"window must lie in 1..{k_max}")

    def steady(series: np.ndarray) -> bool:
        spread = series.max() - series.min()
        return spread <= tol * abs(series.mean())

    for start in range(k_max - window + 1):
        if steady(sum_u[start:start + window]) and steady(sum_v[start:start + window]):
            return start + 1
    return None


def detect_steady_state(trace: SimulationTrace, window: int, tol: float) -> int | None:
    return steady_state_index(trace.sum_u, trace.sum_v, window, tol)


# -- conservation audit -------------------------------------------------------


@dataclass(frozen=True)
class ConservationAudit:
    """Per-step gap between recorded total mass and the mass implied by the
    retained step models (column sums of A and B applied to the trace)."""

    imbalance: np.ndarray
    flagged: tuple[int, ...]
    tol: float

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.imbalance).max(initial=0.0))


def conservation_audit(
    trace: SimulationTrace, g: NoirGraph, tol: float = 1e-8
) -> ConservationAudit:
    """Recompute each step's total mass independently and compare.

    The expected next total is 1'A x + 1'B s plus the recorded settling
    corrections, with the column sums of A obtained from one linear solve
    per retained model and the column sums of B read off the graph
    (+out-degree for inlets, -in-degree for outlets).
    """
    if trace.models is None:
        raise ValueError("trace did not retain per-step models; rerun with retain_models")

    b_colsum = np.zeros(g.n_boundary)
    for j in range(1, g.n_boundary + 1):
        if g.is_inlet(j):
            b_colsum[j - 1] = float(len(g.out_list(j)))
        else:
            b_colsum[j - 1] = -float(len(g.in_list(j)))

    n = g.n_interior
    imbalance = np.zeros(trace.steps)
    for k in range(1, trace.steps + 1):
        model = trace.models[k - 1]
        qp_mat = model.qp_matrix()
        # 1'A via one solve: A' 1 = (I - QP)^-T (1 - p).
        a_colsum = np.linalg.solve((np.eye(n) - qp_mat).T, 1.0 - model.p)
        expected = (
            a_colsum @ trace.states[k - 1]
            + b_colsum @ trace.controls[k - 1]
            + trace.floor_added[k - 1]
            - trace.cap_removed[k - 1]
        )
        imbalance[k - 1] = trace.states[k].sum() - expected

    flagged = tuple(int(k + 1) for k in np.flatnonzero(np.abs(imbalance) > tol))
    return ConservationAudit(imbalance=imbalance, flagged=flagged, tol=tol)


# -- trace CSV ---------------------------------------------------------------


def trace_to_csv(trace: SimulationTrace) -> str:
    """Long-format CSV with deterministic float formatting.

    Kinds: density (per interior road, k = 0..K), inflow_u / outflow_v (per
    boundary road, k = 1..K), objective, rho_sum_u, rho_sum_v and
    spectral_radius (aggregates, id ``all``, k = 1..K).
    """
    lines = [CSV_HEADER]
    ids = trace.interior_ids
    for k in range(trace.states.shape[0]):
        row = trace.states[k]
        for idx, rid in enumerate(ids):
            lines.append(f"{k},{rid},{KIND_DENSITY},{row[idx]!r}")
    for k in range(1, trace.steps + 1):
        ctrl = trace.controls[k - 1]
        for j in range(trace.n_in):
            lines.append(f"{k},{j + 1},{KIND_INFLOW},{ctrl[j]!r}")
        for j in range(trace.n_in, trace.n_out_end):
            lines.append(f"{k},{j + 1},{KIND_OUTFLOW},{ctrl[j]!r}")
        lines.append(f"{k},{AGGREGATE_ID},{KIND_OBJECTIVE},{trace.objective[k - 1]!r}")
        lines.append(f"{k},{AGGREGATE_ID},{KIND_SUM_U},{trace.sum_u[k - 1]!r}")
        lines.append(f"{k},{AGGREGATE_ID},{KIND_SUM_V},{trace.sum_v[k - 1]!r}")
        lines.append(f"{k},{AGGREGATE_ID},{KIND_RADIUS},{trace.radius_a[k - 1]!r}")
    return "\n".join(lines) + "\n"


@dataclass
class TraceTable:
    """Parsed trace CSV: series keyed by (kind, id), each a (k, value) list."""

    series: dict[tuple[str, str], list[tuple[int, float]]] = field(default_factory=dict)

    def ids_for(self, kind: str) -> list[str]:
        found = {rid for (k, rid) in self.series if k == kind}
        return sorted(found, key=lambda r: (len(r), r))

    def values(self, kind: str, rid: str) -> np.ndarray:
        rows = sorted(self.series[(kind, rid)])
        return np.array([v for _, v in rows])


def parse_trace_csv(text: str) -> TraceTable:
    """Parse the documented schema; malformed rows report their line number."""
    lines = text.splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"line 1: expected header {CSV_HEADER!r}")
    table = TraceTable()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 comma-separated fields")
        try:
            k = int(parts[0])
            value = float(parts[3])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed numeric field") from None
        table.series.setdefault((parts[2], parts[1]), []).append((k, value))
    return table


def summary_text(trace: SimulationTrace, g: NoirGraph | None = None) -> str:
    """Human-readable run report (not byte-stable: includes wall time)."""
    worst, bound = trace.bibo_bound()
    steady = steady_state_index(trace.sum_u, trace.sum_v, min(50, trace.steps), 0.1)
    lines = [
        "simulation summary",
        f"  seed: {trace.config.seed}",
        f"  steps: {trace.steps}",
        f"  beta: {trace.config.beta}",
        f"  budget d0: {trace.config.d0}",
        f"  interior roads: {trace.states.shape[1]}",
        f"  boundary roads: {trace.n_out_end} ({trace.n_in} inlets)",
        f"  steady-state index (window {min(50, trace.steps)}, tol 10%): {steady}",
        f"  mean sum_u: {trace.sum_u.mean():.3f}   mean sum_v: {trace.sum_v.mean():.3f}",
        f"  density range: [{trace.states.min():.6f}, {trace.states.max():.6f}]",
        f"  max spectral radius of A: {trace.radius_a.max():.6f}",
        f"  max ||x||^2: {worst:.3f}  bounded by: {bound:.3f}",
        f"  max QP KKT residual: {trace.kkt_max.max():.3e}",
        f"  QP iterations (max): {int(trace.qp_iterations.max())}",
        f"  overdraw floored (total vehicles): {trace.floor_added.sum():.3f}",
        f"  wall time: {trace.wall_time_s:.3f} s",
    ]
    if trace.models is not None and g is not None:
        audit = conservation_audit(trace, g)
        lines.append(f"  conservation audit: max |imbalance| {audit.max_abs:.3e} "
                     f"({'ok' if audit.ok else f'{len(audit.flagged)} steps flagged'})")
    if steady is not None:
        post_u = trace.sum_u[steady - 1:]
        post_v = trace.sum_v[steady - 1:]
        lines.append(f"  post-steady mean sum_u: {post_u.mean():.3f}  sum_v: {post_v.mean():.3f}")
    return "\n".join(lines) + "\n"
