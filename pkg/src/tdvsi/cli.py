"""Command-line frontend.

Exit codes are part of the contract for scripting: 0 success, 2 input or
validation problem, 3 solver divergence before the requested work finished,
4 estimation failure. Human-readable chatter goes to stderr; data goes to
the requested output files (or stdout for the what-if table).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import circuits
from .errors import (
    BaseCaseDiverged,
    DeadChannel,
    IllConditioned,
    NotConverged,
    ParseError,
    TdvsiError,
    UnknownBus,
    ValidationError,
    WindowTooSmall,
)
from .estimator import EstimatorConfig, equivalent_to_dict, estimate, with_recovered_source
from .indices import build_report
from .measurement import read_frames, windows_by_substation, write_frames
from .network import load_network
from .phasors import BalancedSpec, balanced_matrix
from .pipeline import (
    SWEEP_WINDOW,
    run_monitor,
    run_sweep,
    run_whatif,
    simulate_frames,
    write_sweep_csv,
)
from .powerflow import SolverOptions, add_line, apply_var_support

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_ESTIMATION = 4


def _log(msg):
    print(msg, file=sys.stderr)


def _lambda_list(args):
    if args.lam_list:
        return [float(x) for x in args.lam_list.split(",") if x.strip()]
    if args.lam_points < 1:
        raise ValueError("--lam-points must be >= 1")
    if args.lam_points == 1:
        return [args.lam_start]
    step = (args.lam_stop - args.lam_start) / (args.lam_points - 1)
    return [args.lam_start + i * step for i in range(args.lam_points)]


def _estimator_config(args) -> EstimatorConfig:
    return EstimatorConfig(
        mode=args.mode,
        xi_t=args.xi_t,
        xi_d=args.xi_d,
        ridge=args.ridge,
        cond_max=args.cond_max,
    )


def _pmu_overrides(args) -> dict[str, str]:
    out = {}
    for spec in args.pmu or []:
        sub, _, node = spec.partition(":")
        if not node:
            raise ValueError(f"--pmu expects SUBSTATION:NODE, got {spec!r}")
        out[sub] = node
    return out


def cmd_simulate(args) -> int:
    model = load_network(args.network, validate_schema=True)
    lambdas = _lambda_list(args)
    placement = args.placement.split(",") if args.placement else None
    frames, failed = simulate_frames(
        model,
        lambdas,
        placement=placement,
        pmu_nodes=_pmu_overrides(args),
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        solver=args.solver,
    )
    write_frames(frames, args.out)
    if failed is not None:
        _log(
            f"warning: solver diverged at lambda={failed:g}; "
            f"wrote {len(frames)} frames up to the last convergent point"
        )
        return EXIT_SOLVER
    _log(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    frames = read_frames(args.frames)
    config = _estimator_config(args)
    results = []
    for sub, window in windows_by_substation(frames).items():
        for node in window.nodes:
            eq = estimate(window, node, config)
            results.append(equivalent_to_dict(with_recovered_source(window, eq)))
    with open(args.out, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"estimated {len(results)} node equivalents -> {args.out}")
    return EXIT_OK


def cmd_monitor(args) -> int:
    frames = read_frames(args.frames)
    reports = run_monitor(
        frames,
        window=args.window,
        config=_estimator_config(args),
        boundary_band=args.boundary_band,
    )
    if not reports:
        raise WindowTooSmall(
            f"no window of {args.window} frames could be estimated; "
            f"provide a longer recording"
        )
    import csv

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "node", "vsi_3ph", "tddi", "class", "critical", "limiting"])
        for k, rep in reports:
            for node, ix in rep.nodes.items():
                w.writerow(
                    [k, node, f"{ix.vsi_3ph:.17g}", f"{ix.tddi:.17g}",
                     "critical" if node == rep.critical_node else "",
                     rep.critical_node, rep.limiting]
                )
    last = reports[-1][1]
    _log(
        f"{len(reports)} windows -> {args.out}; latest: critical={last.critical_node} "
        f"({last.limiting}, vsi={last.nodes[last.critical_node].vsi_3ph:.3f})"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    model = load_network(args.network, validate_schema=True)
    config = EstimatorConfig(cond_max=args.cond_max)
    sweep = run_sweep(
        model,
        window=args.window,
        config=config,
        solver=args.solver,
        step0=args.step,
        min_step=args.min_step,
        pmu_nodes=_pmu_overrides(args),
    )
    write_sweep_csv(sweep, args.out)
    last = sweep.final()
    _log(
        f"lambda_max={sweep.nose.lambda_max:.6g} ({sweep.nose.mode} mode), "
        f"{len(sweep.rows)} points -> {args.out}"
    )
    if last.critical_node:
        _log(
            f"final point: P={last.total_p:.5g}, critical={last.critical_node}, "
            f"vsi={last.vsi_3ph[last.critical_node]:.4f}"
        )
    return EXIT_OK


def _parse_interventions(model, specs):
    out = []
    for spec in specs or []:
        parts = spec.split(":")
        if parts[0] == "var" and len(parts) == 3:
            bus, q = parts[1], float(parts[2])
            out.append((spec, apply_var_support(model, bus, q)))
        elif parts[0] == "line" and len(parts) in (4, 5):
            frm, to = parts[1], parts[2]
            z_self = complex(parts[3])
            z_mut = complex(parts[4]) if len(parts) == 5 else 0j
            z = balanced_matrix(BalancedSpec(z_self, z_mut))
            out.append((spec, add_line(model, frm, to, z)))
        else:
            raise ValueError(
                f"bad intervention {spec!r}; expected var:BUS:Q or "
                f"line:FROM:TO:Z_SELF[:Z_MUTUAL]"
            )
    return out


def cmd_whatif(args) -> int:
    model = load_network(args.network, validate_schema=True)
    interventions = _parse_interventions(model, args.intervention)
    rows = run_whatif(
        model, interventions, solver=args.solver, step0=args.step, min_step=args.min_step
    )
    print("intervention,lambda_max,delta_pct")
    for r in rows:
        print(f"{r.label},{r.lambda_max:.6g},{r.delta_pct:.4g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tdvsi",
        description="Three-phase Thevenin estimation and voltage-stability indices",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_solver(sp):
        sp.add_argument("--solver", choices=["cosim", "monolithic"], default="cosim")

    def add_estimator(sp):
        sp.add_argument("--mode", choices=["exact_symmetric", "soft_constrained"],
                        default="exact_symmetric")
        sp.add_argument("--xi-t", type=float, default=0.05)
        sp.add_argument("--xi-d", type=float, default=0.05)
        sp.add_argument("--ridge", type=float, default=0.0)
        sp.add_argument("--cond-max", type=float, default=1e8)

    sp = sub.add_parser("simulate", help="solve a loading trajectory and write frames CSV")
    sp.add_argument("--network", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lam-start", type=float, default=1.0)
    sp.add_argument("--lam-stop", type=float, default=1.2)
    sp.add_argument("--lam-points", type=int, default=20)
    sp.add_argument("--lam-list", help="explicit comma-separated loading factors")
    sp.add_argument("--placement", help="comma-separated uPMU nodes (default: all load nodes)")
    sp.add_argument("--pmu", action="append", help="SUBSTATION:NODE PMU relocation")
    sp.add_argument("--noise-sigma", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    add_solver(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="estimate per-node equivalents from frames CSV")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--out", required=True)
    add_estimator(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("monitor", help="sliding-window estimation + stability report")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--window", type=int, default=SWEEP_WINDOW)
    sp.add_argument("--boundary-band", type=float, default=0.05)
    add_estimator(sp)
    sp.set_defaults(func=cmd_monitor)

    sp = sub.add_parser("sweep", help="continuation to the loadability limit with index curves")
    sp.add_argument("--network", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--window", type=int, default=SWEEP_WINDOW)
    sp.add_argument("--step", type=float, default=0.05)
    sp.add_argument("--min-step", type=float, default=1e-4)
    sp.add_argument("--cond-max", type=float, default=math.inf)
    sp.add_argument("--pmu", action="append", help="SUBSTATION:NODE PMU relocation")
    add_solver(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("whatif", help="lambda_max impact of var support / line additions")
    sp.add_argument("--network", required=True)
    sp.add_argument("--intervention", action="append",
                    help="var:BUS:Q or line:FROM:TO:Z_SELF[:Z_MUTUAL] (repeatable)")
    sp.add_argument("--step", type=float, default=0.05)
    sp.add_argument("--min-step", type=float, default=1e-4)
    add_solver(sp)
    sp.set_defaults(func=cmd_whatif)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ParseError, ValidationError, UnknownBus, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    except (NotConverged, BaseCaseDiverged) as exc:
        _log(f"solver error: {exc}")
        return EXIT_SOLVER
    except (IllConditioned, WindowTooSmall, DeadChannel) as exc:
        _log(f"estimation error: {exc}")
        if isinstance(exc, IllConditioned):
            _log("hint: a longer window or richer load variation usually fixes this")
        return EXIT_ESTIMATION
    except TdvsiError as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
