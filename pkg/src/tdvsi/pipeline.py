"""End-to-end flows wiring solves, frames, estimation and indices together.

These are the engines behind the command-line interface; tests drive them
directly. A sweep runs the continuation, replays the accepted trajectory as
measurement frames, estimates per-node equivalents over a sliding window at
every point, and emits plot-ready index curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned, NotConverged, UnknownBus, WindowTooSmall
from .estimator import DEFAULT_CONFIG, EstimatorConfig, estimate
from .indices import StabilityReport, build_report, classify_limiting, losses_3ph, tddi, vsi_3ph
from .measurement import (
    Channel,
    MeasurementFrame,
    MeasurementWindow,
    add_noise,
    windows_by_substation,
)
from .network import NetworkModel
from .phasors import Phasor3
from .powerflow import (
    DEFAULT_OPTIONS,
    NoseResult,
    SolveResult,
    SolverOptions,
    cosim_solve,
    feeder_head_current,
    find_lambda_max,
    monolithic_solve,
)

SWEEP_WINDOW = 20  # frames per sliding estimation window

# ramp excitation moves every load along one ray, so the delta system is
# structurally rank-poor; sweeps therefore accept any condition number and
# rely on the minimum-norm solution, which is exact on the excited subspace
# for noiseless frames
SWEEP_CONFIG = EstimatorConfig(cond_max=math.inf)


def frames_from_results(
    model: NetworkModel,
    points,
    node_placement,
    pmu_nodes: dict[str, str] | None = None,
    dt: float = 1.0,
) -> list[MeasurementFrame]:
    """Build measurement frames from already-solved (lambda, result) points."""
    placement = list(node_placement)
    by_sub: dict[str, list[str]] = {}
    for node in placement:
        sub, _ = model.feeder_of_node(node)
        by_sub.setdefault(sub, []).append(node)
    pmu_nodes = pmu_nodes or {}
    frames = []
    for k, (_lam, res) in enumerate(points):
        for sub in model.substations:
            nodes = by_sub.get(sub)
            if not nodes:
                continue
            pmu_bus = pmu_nodes.get(sub, sub)
            frames.append(
                MeasurementFrame(
                    k=k,
                    t=k * dt,
                    substation_id=pmu_bus,
                    v_t=res.node_voltages[pmu_bus],
                    channels={
                        n: Channel(res.node_voltages[n], res.load_currents[n])
                        for n in nodes
                    },
                )
            )
    return frames


def downstream_current(model: NetworkModel, result: SolveResult, point: str) -> Phasor3:
    """Aggregate current flowing from a measurement point into its feeders.

    At a substation bus this is the multiplicity-weighted sum of feeder head
    currents; at an interior feeder node it is the sum of branch currents
    leaving the node away from the root.
    """
    total = np.zeros(3, complex)
    found = False
    for sub in model.substations:
        for f in model.feeders.get(sub, ()):
            for br in f.branches:
                if br.from_node == point:
                    total += f.multiplicity * result.branch_currents[
                        (br.from_node, br.to_node)
                    ].as_array()
                    found = True
    if not found:
        raise UnknownBus(f"no feeder branch leaves measurement point {point!r}")
    return Phasor3.from_array(total)


def substation_gauge_series(model, points, point: str):
    """(V_pos[k], I_pos[k]) positive-sequence series at a measurement point."""
    v = np.array(
        [res.node_voltages[point].positive_sequence() for _lam, res in points]
    )
    i = np.array(
        [downstream_current(model, res, point).positive_sequence() for _lam, res in points]
    )
    return v, i


def upstream_impedance_1ph(v_pos: np.ndarray, i_pos: np.ndarray) -> complex:
    """Least-squares fit of -dV/dI over a window (scalar complex)."""
    dv = v_pos[1:] - v_pos[0]
    di = i_pos[1:] - i_pos[0]
    denom = np.sum(np.conj(di) * di)
    if abs(denom) == 0:
        return 0j
    return complex(-np.sum(np.conj(di) * dv) / denom)


@dataclass
class SweepRow:
    lam: float
    total_p: float
    min_v: float
    vsi_3ph: dict[str, float]
    tddi: dict[str, float]
    vsi_t: dict[str, float]
    critical_node: str | None


@dataclass
class SweepResult:
    nose: NoseResult
    rows: list[SweepRow]
    frames: list[MeasurementFrame]

    def final(self) -> SweepRow:
        return self.rows[-1]


def run_sweep(
    model: NetworkModel,
    placement=None,
    pmu_nodes: dict[str, str] | None = None,
    window: int = SWEEP_WINDOW,
    config: EstimatorConfig = SWEEP_CONFIG,
    solver: str = "cosim",
    opts: SolverOptions = DEFAULT_OPTIONS,
    step0: float = 0.05,
    min_step: float = 1e-4,
    start_lam: float = 1.0,
) -> SweepResult:
    """Continuation to the loadability limit with index curves along the way."""
    placement = list(placement) if placement is not None else model.load_nodes()
    nose = find_lambda_max(
        model, solver=solver, opts=opts, step0=step0, min_step=min_step,
        start_lam=start_lam,
    )
    points = nose.trajectory
    frames = frames_from_results(model, points, placement, pmu_nodes)
    frame_groups: dict[str, list[MeasurementFrame]] = {}
    for f in frames:
        frame_groups.setdefault(f.substation_id, []).append(f)

    gauges = {}
    pmu_nodes = pmu_nodes or {}
    gauge_points = {pmu_nodes.get(sub, sub) for sub in model.substations
                    if any(model.feeders.get(sub, ()))}
    for point in gauge_points:
        gauges[point] = substation_gauge_series(model, points, point)

    rows: list[SweepRow] = []
    for k, (lam, res) in enumerate(points):
        lo = max(0, k + 1 - window)
        vsi_map: dict[str, float] = {}
        tddi_map: dict[str, float] = {}
        for sub_id, group in frame_groups.items():
            sub_frames = group[lo : k + 1]
            if len(sub_frames) < 4:
                continue
            win = MeasurementWindow(sub_frames)
            latest = sub_frames[-1]
            for node in win.nodes:
                try:
                    eq = estimate(win, node, config)
                except (IllConditioned, WindowTooSmall):
                    continue
                ch = latest.channels[node]
                s_t, s_d, s_load = losses_3ph(ch.i_l, eq.z_eq_t, eq.z_eq_d, v_d=ch.v_d)
                vsi_map[node] = vsi_3ph(s_t, s_d, s_load)
                tddi_map[node] = tddi(s_t, s_d)
        vsi_t_map: dict[str, float] = {}
        for point, (v_pos, i_pos) in gauges.items():
            if k >= 1 and abs(i_pos[k]) > 0:
                z_up = upstream_impedance_1ph(v_pos[lo : k + 1], i_pos[lo : k + 1])
                z_lt = v_pos[k] / i_pos[k]
                if abs(z_lt) > 0:
                    vsi_t_map[point] = abs(z_up) / abs(z_lt)
        critical = max(vsi_map, key=vsi_map.get) if vsi_map else None
        rows.append(
            SweepRow(
                lam=lam,
                total_p=res.total_load_s.real,
                min_v=res.min_voltage(),
                vsi_3ph=vsi_map,
                tddi=tddi_map,
                vsi_t=vsi_t_map,
                critical_node=critical,
            )
        )
    return SweepResult(nose=nose, rows=rows, frames=frames)


def write_sweep_csv(sweep: SweepResult, path):
    nodes = sorted({n for r in sweep.rows for n in r.vsi_3ph})
    subs = sorted({s for r in sweep.rows for s in r.vsi_t})
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["lambda", "total_p", "min_v"]
        header += [f"vsi3ph_{n}" for n in nodes]
        header += [f"tddi_{n}" for n in nodes]
        header += [f"vsit_{s}" for s in subs]
        header += ["critical_node"]
        w.writerow(header)
        for r in sweep.rows:
            row = [f"{r.lam:.17g}", f"{r.total_p:.17g}", f"{r.min_v:.17g}"]
            row += [f"{r.vsi_3ph[n]:.17g}" if n in r.vsi_3ph else "" for n in nodes]
            row += [f"{r.tddi[n]:.17g}" if n in r.tddi else "" for n in nodes]
            row += [f"{r.vsi_t[s]:.17g}" if s in r.vsi_t else "" for s in subs]
            row.append(r.critical_node or "")
            w.writerow(row)


# ----------------------------------------------------------------------
# simulate and monitor


def simulate_frames(
    model: NetworkModel,
    lambdas,
    placement=None,
    pmu_nodes=None,
    noise_sigma: float = 0.0,
    seed: int = 0,
    solver: str = "cosim",
    opts: SolverOptions = DEFAULT_OPTIONS,
):
    """Frames for a loading trajectory; on divergence returns what was solved.

    Returns (frames, failed_lambda); failed_lambda is None when every point
    converged.
    """
    placement = list(placement) if placement is not None else model.load_nodes()
    solve = monolithic_solve if solver == "monolithic" else cosim_solve
    points = []
    failed = None
    for lam in lambdas:
        try:
            points.append((float(lam), solve(model, float(lam), opts=opts)))
        except NotConverged:
            failed = float(lam)
            break
    frames = frames_from_results(model, points, placement, pmu_nodes)
    if noise_sigma > 0:
        frames = add_noise(frames, noise_sigma, seed)
    return frames, failed


def run_monitor(
    frames,
    window: int = SWEEP_WINDOW,
    config: EstimatorConfig = DEFAULT_CONFIG,
    boundary_band: float = 0.05,
) -> list[tuple[int, StabilityReport]]:
    """Sliding-window estimation + report over a recorded frame stream.

    Frames carry no substation current, so the per-substation index is not
    computable here; reports carry node indices only.
    """
    reports = []
    for sub_id, win_frames in _group_frames(frames).items():
        for end in range(len(win_frames)):
            lo = max(0, end + 1 - window)
            chunk = win_frames[lo : end + 1]
            if len(chunk) < 4:
                continue
            win = MeasurementWindow(chunk)
            eqs = []
            for node in win.nodes:
                try:
                    eqs.append(estimate(win, node, config))
                except (IllConditioned, WindowTooSmall):
                    continue
            if not eqs:
                continue
            reports.append(
                (chunk[-1].k, build_report(eqs, chunk[-1], boundary_band=boundary_band))
            )
    return reports


def _group_frames(frames):
    groups: dict[str, list[MeasurementFrame]] = {}
    for f in frames:
        groups.setdefault(f.substation_id, []).append(f)
    return groups


# ----------------------------------------------------------------------
# what-if interventions


@dataclass
class WhatIfRow:
    label: str
    lambda_max: float
    delta_pct: float


def run_whatif(
    model: NetworkModel,
    interventions,
    solver: str = "cosim",
    opts: SolverOptions = DEFAULT_OPTIONS,
    step0: float = 0.05,
    min_step: float = 1e-4,
) -> list[WhatIfRow]:
    """lambda_max for the base model and each modified variant.

    `interventions` is a list of (label, model) pairs, typically built with
    apply_var_support / add_line.
    """
    base = find_lambda_max(model, solver=solver, opts=opts, step0=step0, min_step=min_step)
    rows = [WhatIfRow("base", base.lambda_max, 0.0)]
    for label, variant in interventions:
        nose = find_lambda_max(variant, solver=solver, opts=opts, step0=step0, min_step=min_step)
        delta = 100.0 * (nose.lambda_max - base.lambda_max) / base.lambda_max
        rows.append(WhatIfRow(label, nose.lambda_max, delta))
    return rows
