"""Synchronized phasor frames: generation from solves, noise, CSV persistence.

One frame is a single synchronized snapshot: the substation PMU voltage plus,
per monitored node, the load voltage and load current. All devices share one
angle reference (ideal sync). The CSV layout is one row per device per
instant:

    k,t,device_id,kind,node,Va_re,Va_im,Vb_re,Vb_im,Vc_re,Vc_im,
                            Ia_re,Ia_im,Ib_re,Ib_im,Ic_re,Ic_im

PMU rows leave the current columns empty. Within one instant the PMU row
precedes its uPMU rows, which is how the reader reassociates channels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NotConverged, ParseError, UnknownBus, ValidationError
from .network import NetworkModel
from .phasors import Phasor3
from .powerflow import DEFAULT_OPTIONS, SolverOptions, cosim_solve, monolithic_solve

CSV_COLUMNS = [
    "k", "t", "device_id", "kind", "node",
    "Va_re", "Va_im", "Vb_re", "Vb_im", "Vc_re", "Vc_im",
    "Ia_re", "Ia_im", "Ib_re", "Ib_im", "Ic_re", "Ic_im",
]


@dataclass(frozen=True)
class Channel:
    v_d: Phasor3
    i_l: Phasor3


@dataclass(frozen=True)
class MeasurementFrame:
    k: int
    t: float
    substation_id: str
    v_t: Phasor3
    channels: dict[str, Channel] = field(default_factory=dict)


class MeasurementWindow:
    """Frames from one substation with a consistent channel set."""

    def __init__(self, frames):
        frames = list(frames)
        if not frames:
            raise ValidationError("measurement window is empty")
        sub = frames[0].substation_id
        nodes = set(frames[0].channels)
        if not nodes:
            raise ValidationError("measurement window has no uPMU channels")
        for f in frames:
            if f.substation_id != sub:
                raise ValidationError(
                    f"window mixes substations {sub!r} and {f.substation_id!r}"
                )
            if set(f.channels) != nodes:
                raise ValidationError("window frames have inconsistent channel sets")
        self.frames = frames
        self.substation_id = sub
        self.nodes = sorted(nodes)

    def __len__(self):
        return len(self.frames)

    def node_series(self, node: str):
        """(V_T[k], V_D[k], I_L[k]) arrays, each (M, 3) complex."""
        if node not in self.frames[0].channels:
            raise UnknownBus(f"no uPMU channel for node {node!r}")
        v_t = np.array([f.v_t.as_array() for f in self.frames])
        v_d = np.array([f.channels[node].v_d.as_array() for f in self.frames])
        i_l = np.array([f.channels[node].i_l.as_array() for f in self.frames])
        return v_t, v_d, i_l


def windows_by_substation(frames) -> dict[str, MeasurementWindow]:
    groups: dict[str, list[MeasurementFrame]] = {}
    for f in frames:
        groups.setdefault(f.substation_id, []).append(f)
    return {sub: MeasurementWindow(fs) for sub, fs in groups.items()}


# ----------------------------------------------------------------------
# frame generation


def sample_trajectory(
    model: NetworkModel,
    lambdas,
    node_placement,
    pmu_nodes: dict[str, str] | None = None,
    solver: str = "cosim",
    opts: SolverOptions = DEFAULT_OPTIONS,
    dt: float = 1.0,
) -> list[MeasurementFrame]:
    """Solve the model at each loading factor and record exact device phasors.

    `node_placement` lists the uPMU nodes (must carry loads). `pmu_nodes`
    optionally moves a substation's PMU reference to an interior node, e.g.
    the junction of a chain circuit modeled as a single feeder.

    Raises NotConverged (tagged with the failing lambda) if any point fails.
    """
    placement = list(node_placement)
    by_sub: dict[str, list[str]] = {}
    for node in placement:
        sub, _f = model.feeder_of_node(node)
        by_sub.setdefault(sub, []).append(node)
    pmu_nodes = pmu_nodes or {}

    solve = monolithic_solve if solver == "monolithic" else cosim_solve
    frames: list[MeasurementFrame] = []
    for k, lam in enumerate(lambdas):
        try:
            res = solve(model, float(lam), opts=opts)
        except NotConverged as exc:
            raise NotConverged(
                f"trajectory point {k} (lambda={lam}) failed: {exc}", lam=float(lam)
            ) from exc
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


def add_noise(frames, sigma_rel: float, seed: int) -> list[MeasurementFrame]:
    """Perturb every phasor component with N(0, (sigma_rel * |component|)^2).

    Real and imaginary parts are drawn independently; identical seeds give
    identical output. sigma_rel = 0 returns the frames unchanged.
    """
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be >= 0")
    if sigma_rel == 0:
        return list(frames)
    rng = np.random.default_rng(seed)

    def jitter(p: Phasor3) -> Phasor3:
        comps = []
        for z in (p.a, p.b, p.c):
            re, im = rng.standard_normal(2) * (sigma_rel * abs(z))
            comps.append(z + re + 1j * im)
        return Phasor3(*comps)

    out = []
    for f in frames:
        out.append(
            replace(
                f,
                v_t=jitter(f.v_t),
                channels={
                    n: Channel(jitter(ch.v_d), jitter(ch.i_l))
                    for n, ch in f.channels.items()
                },
            )
        )
    return out


# ----------------------------------------------------------------------
# CSV persistence


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_frames(frames, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for f in frames:
            v = f.v_t
            w.writerow(
                [f.k, _fmt(f.t), f"pmu_{f.substation_id}", "PMU", f.substation_id,
                 _fmt(v.a.real), _fmt(v.a.imag), _fmt(v.b.real), _fmt(v.b.imag),
                 _fmt(v.c.real), _fmt(v.c.imag), "", "", "", "", "", ""]
            )
            for node in f.channels:
                ch = f.channels[node]
                vd, il = ch.v_d, ch.i_l
                w.writerow(
                    [f.k, _fmt(f.t), f"upmu_{node}", "uPMU", node,
                     _fmt(vd.a.real), _fmt(vd.a.imag), _fmt(vd.b.real), _fmt(vd.b.imag),
                     _fmt(vd.c.real), _fmt(vd.c.imag),
                     _fmt(il.a.real), _fmt(il.a.imag), _fmt(il.b.real), _fmt(il.b.imag),
                     _fmt(il.c.real), _fmt(il.c.imag)]
                )


def _parse_phasor(row, base, lineno, what):
    vals = []
    for off in range(6):
        cell = row[base + off]
        if cell == "":
            raise ParseError(
                f"line {lineno}: missing {what} column {CSV_COLUMNS[base + off]}"
            )
        try:
            vals.append(float(cell))
        except ValueError as exc:
            raise ParseError(
                f"line {lineno}: bad number in {CSV_COLUMNS[base + off]}: {cell!r}"
            ) from exc
    return Phasor3(
        complex(vals[0], vals[1]), complex(vals[2], vals[3]), complex(vals[4], vals[5])
    )


def read_frames(path) -> list[MeasurementFrame]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    with fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != CSV_COLUMNS:
            missing = [c for c in CSV_COLUMNS if c not in header]
            raise ParseError(
                f"{path}: bad header, missing columns {missing}" if missing
                else f"{path}: unexpected column order"
            )
        frames: list[MeasurementFrame] = []
        current: MeasurementFrame | None = None
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"line {lineno}: expected {len(CSV_COLUMNS)} cells")
            try:
                k = int(row[0])
                t = float(row[1])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad k/t: {exc}") from exc
            kind, node = row[3], row[4]
            if kind == "PMU":
                v_t = _parse_phasor(row, 5, lineno, "voltage")
                current = MeasurementFrame(k=k, t=t, substation_id=node, v_t=v_t)
                frames.append(current)
            elif kind == "uPMU":
                if current is None or current.k != k:
                    raise ParseError(
                        f"line {lineno}: uPMU row for node {node!r} without a "
                        f"preceding PMU row at the same instant"
                    )
                v_d = _parse_phasor(row, 5, lineno, "voltage")
                i_l = _parse_phasor(row, 11, lineno, "current")
                current.channels[node] = Channel(v_d, i_l)
            else:
                raise ParseError(f"line {lineno}: unknown device kind {kind!r}")
    return frames
