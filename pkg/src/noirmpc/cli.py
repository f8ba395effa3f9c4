"""Command-line operator surface.

Commands: ``validate``, ``run``, ``sweep``, ``report``, ``gen-grid``.
Exit codes: 0 success, 1 validation failure or infeasible control problem,
2 file/configuration errors, 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import sim, svgplot
from .config import parse_config_file, render_config
from .errors import (
    ConfigError,
    GridPlacementError,
    NetworkFormatError,
    NoirError,
    SimulationError,
)
from .graph import generate_grid, load_noir_file, serialize_noir, validate

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noirmpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a network file against the structural rules")
    p_val.add_argument("network", help="path to a network file")

    p_run = sub.add_parser("run", help="run one closed-loop simulation")
    p_run.add_argument("config", help="path to a run configuration")
    p_run.add_argument("-o", "--out", required=True, help="output directory")

    p_sweep = sub.add_parser("sweep", help="run the same configuration under several beta values")
    p_sweep.add_argument("config", help="path to a run configuration")
    p_sweep.add_argument("--beta", required=True, help="comma-separated beta values, e.g. 0,0.5,1")
    p_sweep.add_argument("-o", "--out", required=True, help="output directory")

    p_rep = sub.add_parser("report", help="render SVG charts from trace CSVs")
    p_rep.add_argument("trace_dir", help="directory containing trace.csv (or beta_* subdirectories)")
    p_rep.add_argument("--window", type=int, default=50, help="steady-state window (steps)")
    p_rep.add_argument("--tol", type=float, default=0.1, help="steady-state relative tolerance")

    p_gen = sub.add_parser("gen-grid", help="generate a synthetic grid network file")
    p_gen.add_argument("--rows", type=int, required=True)
    p_gen.add_argument("--cols", type=int, required=True)
    p_gen.add_argument("--inlets", type=int, required=True)
    p_gen.add_argument("--outlets", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("-o", "--out", required=True, help="output network file")
    return parser


def _cmd_validate(args) -> int:
    try:
        g = load_noir_file(args.network)
    except FileNotFoundError:
        print(f"error: no such file: {args.network}", file=sys.stderr)
        return EXIT_IO
    except NetworkFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    report = validate(g)
    if report.ok:
        print(f"ok: {g.n_total} roads ({g.n_in} inlets, {g.n_outlets} outlets, "
              f"{g.n_interior} interior), {len(g.edges)} edges")
        return EXIT_OK
    for v in report.violations:
        print(f"violation [{v.rule}] {v.subject}: {v.message}")
    print(f"{len(report.violations)} violation(s)")
    return EXIT_VALIDATION


def _write_run_outputs(trace: sim.SimulationTrace, g, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.csv").write_text(sim.trace_to_csv(trace), encoding="utf-8")
    (out_dir / "summary.txt").write_text(sim.summary_text(trace, g), encoding="utf-8")
    (out_dir / "config.echo.ini").write_text(render_config(trace.config), encoding="utf-8")


def _cmd_run(args) -> int:
    cfg = parse_config_file(args.config)
    g = sim.load_network(cfg)
    trace = sim.run(cfg, g)
    _write_run_outputs(trace, g, Path(args.out))
    print(f"wrote {Path(args.out) / 'trace.csv'}")
    return EXIT_OK


def _parse_betas(raw: str) -> list[float]:
    betas = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        betas.append(float(token))
    if not betas:
        raise ValueError("empty beta list")
    if any(b < 0 for b in betas):
        raise ValueError("beta values must be nonnegative")
    return betas


def _cmd_sweep(args) -> int:
    try:
        betas = _parse_betas(args.beta)
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_IO
    cfg = parse_config_file(args.config)
    g = sim.load_network(cfg)
    out_root = Path(args.out)

    def one(beta: float) -> sim.SimulationTrace:
        run_cfg = replace(cfg, beta=beta)
        trace = sim.run(run_cfg, g)
        _write_run_outputs(trace, g, out_root / _beta_dirname(beta))
        return trace

    with ThreadPoolExecutor(max_workers=len(betas)) as pool:
        traces = list(pool.map(one, betas))

    lines = ["k,beta,rho_sum_u,rho_sum_v,objective"]
    for beta, trace in zip(betas, traces):
        for k in range(1, trace.steps + 1):
            lines.append(
                f"{k},{beta!r},{trace.sum_u[k - 1]!r},{trace.sum_v[k - 1]!r},"
                f"{trace.objective[k - 1]!r}"
            )
    (out_root / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(betas)} runs under {out_root}")
    return EXIT_OK


def _beta_dirname(beta: float) -> str:
    text = f"{beta:g}".replace(".", "_")
    return f"beta_{text}"


def _report_one(trace_dir: Path, window: int, tol: float) -> None:
    table = sim.parse_trace_csv((trace_dir / "trace.csv").read_text(encoding="utf-8"))

    def line_series(kind: str, count: int, prefix: str) -> list[svgplot.Series]:
        picked = table.ids_for(kind)[:count]
        out = []
        for rid in picked:
            values = table.values(kind, rid)
            start = 0 if kind == sim.KIND_DENSITY else 1
            xs = list(range(start, start + len(values)))
            out.append(svgplot.Series(label=f"{prefix} {rid}", xs=xs, ys=list(values)))
        return out

    boundary = line_series(sim.KIND_INFLOW, 2, "inlet") + line_series(sim.KIND_OUTFLOW, 2, "outlet")
    (trace_dir / "boundary_flows.svg").write_text(
        svgplot.line_chart(boundary, title="Boundary flows", y_label="vehicles/step"),
        encoding="utf-8",
    )

    interior = line_series(sim.KIND_DENSITY, 2, "road")
    (trace_dir / "interior_densities.svg").write_text(
        svgplot.line_chart(interior, title="Interior densities", y_label="vehicles"),
        encoding="utf-8",
    )

    sum_u = table.values(sim.KIND_SUM_U, sim.AGGREGATE_ID)
    sum_v = table.values(sim.KIND_SUM_V, sim.AGGREGATE_ID)
    steps = list(range(1, len(sum_u) + 1))
    markers = []
    idx = sim.steady_state_index(sum_u, sum_v, min(window, len(sum_u)), tol)
    if idx is not None:
        markers.append(svgplot.Marker(x=float(idx), label=f"steady k={idx}"))
    aggregate = [
        svgplot.Series(label="sum u", xs=steps, ys=list(sum_u)),
        svgplot.Series(label="sum v", xs=steps, ys=list(sum_v)),
    ]
    (trace_dir / "aggregate_flows.svg").write_text(
        svgplot.line_chart(aggregate, title="Aggregate boundary inflow and outflow",
                           y_label="vehicles/step", markers=markers),
        encoding="utf-8",
    )


def _cmd_report(args) -> int:
    root = Path(args.trace_dir)
    targets = []
    if (root / "trace.csv").exists():
        targets.append(root)
    targets.extend(sorted(p.parent for p in root.glob("beta_*/trace.csv")))
    if not targets:
        print(f"error: no trace.csv under {root}", file=sys.stderr)
        return EXIT_IO
    try:
        for target in targets:
            _report_one(target, args.window, args.tol)
    except ValueError as exc:
        print(f"error: malformed trace: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"rendered charts for {len(targets)} trace(s)")
    return EXIT_OK


def _cmd_gen_grid(args) -> int:
    g = generate_grid(args.rows, args.cols, args.inlets, args.outlets, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize_noir(g), encoding="utf-8")
    print(f"wrote {out} ({g.n_total} roads)")
    return EXIT_OK


_HANDLERS = {
    "validate": _cmd_validate,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "gen-grid": _cmd_gen_grid,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except (ConfigError, NetworkFormatError, GridPlacementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NoirError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
