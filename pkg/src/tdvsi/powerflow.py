"""Steady-state solvers and continuation loading.

Three solver entry points share one model semantic:

* ``solve_feeder``      -- full 3x3 unbalanced nodal Newton on one radial feeder
                           at a fixed (balanced) head voltage.
* ``solve_transmission``-- positive-sequence nodal Newton on the transmission
                           graph; feeder aggregates enter as net 3-phase power
                           draws per substation (transmission lines are
                           balanced, so only the positive sequence is excited).
* ``cosim_solve``       -- alternates the two, exchanging substation voltage
                           and net aggregate power until the exchange settles.

``monolithic_solve`` solves the identical composite model simultaneously
(one Newton over all unknowns, numerical Jacobian) and exists as an
independent cross-check of the exchange loop.

``find_lambda_max`` scales every load by a common factor and brackets the
last solvable point. For models with constant-power loads the stopping event
is solver divergence (the loadability nose); for purely constant-impedance
models, which stay solvable at any scaling, it brackets the peak of delivered
power instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BaseCaseDiverged, NotConverged, UnknownBus, ValidationError
from .network import Branch, Feeder, NetworkModel, validate_network
from .phasors import ImpedanceMatrix3, Phasor3, positive_sequence

_POS_UNITS = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])


@dataclass
class SolverOptions:
    """Shared iteration budgets and tolerances."""

    max_iter: int = 100          # Newton iterations per solve
    tol: float = 1e-8            # max per-phase power mismatch (pu)
    v_min: float = 0.3           # converged solutions below this are treated as collapsed
    exchange_tol: float = 1e-6   # substation voltage change between exchange rounds
    max_rounds: int = 50         # exchange rounds before giving up


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class SolveResult:
    node_voltages: dict[str, Phasor3]
    branch_currents: dict[tuple[str, str], Phasor3]
    load_currents: dict[str, Phasor3]
    converged: bool
    iterations: int
    mismatch: float
    total_load_s: complex = 0j

    def min_voltage(self) -> float:
        mags = [m for p in self.node_voltages.values() for m in p.magnitudes()]
        return min(mags) if mags else float("nan")


@dataclass
class NoseResult:
    lambda_max: float
    trajectory: list[tuple[float, SolveResult]]
    mode: str                   # "divergence" or "peak"
    final_step: float
    upper_bound: float | None   # tightest lambda known to fail / decline

    def lambdas(self) -> list[float]:
        return [lam for lam, _ in self.trajectory]


# ----------------------------------------------------------------------
# generic dense complex Newton on current residuals


def _newton(y_full, e_slack, s_draw, i_draw, y_shunt, opts: SolverOptions, v0=None):
    """Solve (Y V)_k + conj(s_k / V_k) + y_shunt_k V_k - i_inj_k = 0 for non-slack rows.

    y_full: (n+m, n+m) complex admittance over [slack nodes | unknown nodes];
    e_slack: fixed voltages of the slack block; s_draw/i draw/y_shunt: per
    unknown row. Returns (V_unknown, iterations, mismatch) or raises
    NotConverged.
    """
    m = len(e_slack)
    n = y_full.shape[0] - m
    if n == 0:
        return np.zeros(0, complex), 0, 0.0
    y_su = y_full[m:, :m]
    y_uu = y_full[m:, m:] + np.diag(y_shunt)
    const = y_su @ e_slack - i_draw

    if v0 is not None:
        v = np.array(v0, dtype=complex)
    elif m:
        v = np.resize(e_slack, n)
    else:
        v = np.ones(n, complex)

    def residual(vv):
        return y_uu @ vv + const + np.conj(s_draw / vv)

    it = 0
    for it in range(opts.max_iter):
        r = residual(v)
        mism = float(np.max(np.abs(v * np.conj(r)))) if n else 0.0
        if not np.isfinite(mism):
            raise NotConverged("solver produced non-finite iterate")
        if mism < opts.tol:
            if n and float(np.min(np.abs(v))) < opts.v_min:
                raise NotConverged(
                    f"converged onto collapsed branch (min |V| = {np.min(np.abs(v)):.3f})"
                )
            return v, it, mism
        # real-ified Jacobian: complex-linear part y_uu, conjugate-linear part C
        c = np.conj(s_draw) / np.conj(v) ** 2 * (-1.0)
        g, b = y_uu.real, y_uu.imag
        a = np.empty((2 * n, 2 * n))
        a[:n, :n] = g + np.diag(c.real)
        a[:n, n:] = -b + np.diag(c.imag)
        a[n:, :n] = b + np.diag(c.imag)
        a[n:, n:] = g - np.diag(c.real)
        rhs = -np.concatenate([r.real, r.imag])
        try:
            dx = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError as exc:
            raise NotConverged(f"singular Jacobian: {exc}") from exc
        base = float(np.linalg.norm(rhs))
        step = 1.0
        for _ in range(12):
            vt = v + step * (dx[:n] + 1j * dx[n:])
            if np.all(np.abs(vt) > 1e-12):
                rt = residual(vt)
                if float(np.linalg.norm(np.concatenate([rt.real, rt.imag]))) < base:
                    break
            step *= 0.5
        else:
            raise NotConverged("line search stalled (no descent direction)")
        v = vt
    raise NotConverged(f"no convergence after {opts.max_iter} iterations")


# ----------------------------------------------------------------------
# feeder solve (full three-phase)


def _feeder_structure(feeder: Feeder, root: str):
    nodes = feeder.nodes(root)
    index = {n: i for i, n in enumerate(nodes)}
    yb = {}
    for br in feeder.branches:
        yb[(br.from_node, br.to_node)] = np.linalg.inv(br.z.as_array())
    return nodes, index, yb


def _feeder_loads(feeder: Feeder, lam: float, shunts=()):
    """Per-node constant-power draw and constant-impedance admittance at scale lam."""
    s_draw: dict[str, np.ndarray] = {}
    y_load: dict[str, np.ndarray] = {}
    for n, spec in feeder.loads.items():
        s = lam * np.array(spec.s_nominal, dtype=complex)
        if spec.model == "constant_power":
            s_draw[n] = s_draw.get(n, np.zeros(3, complex)) + s
        else:
            y_load[n] = y_load.get(n, np.zeros(3, complex)) + np.conj(s)
    for sh in shunts:
        s_draw[sh.node] = s_draw.get(sh.node, np.zeros(3, complex)) - np.array(
            sh.s_inject, dtype=complex
        )
    return s_draw, y_load


def solve_feeder(
    feeder: Feeder,
    substation_voltage: Phasor3,
    lam: float = 1.0,
    shunts=(),
    opts: SolverOptions = DEFAULT_OPTIONS,
    v0=None,
) -> SolveResult:
    """Solve one radial feeder at a fixed head voltage; loads scaled by lam."""
    root_candidates = {b.from_node for b in feeder.branches} - {
        b.to_node for b in feeder.branches
    }
    if len(root_candidates) != 1:
        raise ValidationError(
            f"feeder {feeder.name!r}: cannot identify a unique root"
        )
    root = root_candidates.pop()
    nodes, index, yb = _feeder_structure(feeder, root)
    n_unk = len(nodes) - 1
    e = substation_voltage.as_array()

    y = np.zeros((3 * len(nodes), 3 * len(nodes)), complex)
    for (f, t), block in yb.items():
        i, j = index[f], index[t]
        y[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] += block
        y[3 * j : 3 * j + 3, 3 * j : 3 * j + 3] += block
        y[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] -= block
        y[3 * j : 3 * j + 3, 3 * i : 3 * i + 3] -= block

    s_draw_map, y_load_map = _feeder_loads(feeder, lam, shunts)
    s_draw = np.zeros(3 * n_unk, complex)
    y_shunt = np.zeros(3 * n_unk, complex)
    for node, s in s_draw_map.items():
        if node == root:
            continue
        k = index[node] - 1
        s_draw[3 * k : 3 * k + 3] += s
    for node, yl in y_load_map.items():
        if node == root:
            continue
        k = index[node] - 1
        y_shunt[3 * k : 3 * k + 3] += yl

    try:
        v, it, mism = _newton(
            y, e, s_draw, np.zeros(3 * n_unk, complex), y_shunt, opts,
            v0=np.asarray(v0, complex) if v0 is not None else np.tile(e, n_unk) if n_unk else None,
        )
    except NotConverged:
        raise
    volts = {root: substation_voltage}
    for node in nodes[1:]:
        k = index[node] - 1
        volts[node] = Phasor3.from_array(v[3 * k : 3 * k + 3])

    branch_currents = {}
    for br in feeder.branches:
        vf = volts[br.from_node].as_array()
        vt = volts[br.to_node].as_array()
        branch_currents[(br.from_node, br.to_node)] = Phasor3.from_array(
            yb[(br.from_node, br.to_node)] @ (vf - vt)
        )

    load_currents = {}
    total_s = 0j
    for node, spec in feeder.loads.items():
        vn = volts[node].as_array()
        s = lam * np.array(spec.s_nominal, complex)
        if spec.model == "constant_power":
            i_ld = np.where(s != 0, np.conj(s / vn), 0.0)
        else:
            i_ld = np.conj(s) * vn
        load_currents[node] = Phasor3.from_array(i_ld)
        total_s += complex(np.sum(vn * np.conj(i_ld)))

    return SolveResult(
        node_voltages=volts,
        branch_currents=branch_currents,
        load_currents=load_currents,
        converged=True,
        iterations=it,
        mismatch=mism,
        total_load_s=total_s,
    )


def feeder_head_current(feeder: Feeder, result: SolveResult) -> Phasor3:
    """Per-feeder current leaving the substation into this feeder."""
    root = {b.from_node for b in feeder.branches} - {b.to_node for b in feeder.branches}
    root = root.pop()
    total = np.zeros(3, complex)
    for br in feeder.branches:
        if br.from_node == root:
            total += result.branch_currents[(br.from_node, br.to_node)].as_array()
    return Phasor3.from_array(total)


# ----------------------------------------------------------------------
# transmission solve (positive sequence)


def _tn_structure(branches, source_bus):
    buses = [source_bus]
    for b in branches:
        for n in (b.from_node, b.to_node):
            if n not in buses:
                buses.append(n)
    index = {b: i for i, b in enumerate(buses)}
    y = np.zeros((len(buses), len(buses)), complex)
    z_pos = {}
    for b in branches:
        zp = positive_sequence(b.z)
        z_pos[(b.from_node, b.to_node)] = zp
        i, j = index[b.from_node], index[b.to_node]
        y[i, i] += 1 / zp
        y[j, j] += 1 / zp
        y[i, j] -= 1 / zp
        y[j, i] -= 1 / zp
    return buses, index, y, z_pos


def solve_transmission(
    branches,
    source_bus: str,
    source_voltage: Phasor3,
    power_draws: dict[str, complex] | None = None,
    current_draws: dict[str, complex] | None = None,
    opts: SolverOptions = DEFAULT_OPTIONS,
    v0=None,
) -> SolveResult:
    """Positive-sequence solve of the (balanced) transmission graph.

    power_draws: net three-phase complex power drawn per bus (negative values
    inject); current_draws: fixed positive-sequence current drawn per bus.
    """
    power_draws = dict(power_draws or {})
    current_draws = dict(current_draws or {})
    buses, index, y, z_pos = _tn_structure(branches, source_bus)
    for bus in list(power_draws) + list(current_draws):
        if bus not in index:
            raise UnknownBus(f"injection references unknown transmission bus {bus!r}")

    e_pos = source_voltage.positive_sequence()
    n = len(buses) - 1
    # per-phase draw of the balanced equivalent is one third of the 3-phase total
    s_draw = np.zeros(n, complex)
    i_draw = np.zeros(n, complex)
    for bus, s in power_draws.items():
        if bus != source_bus:
            s_draw[index[bus] - 1] += s / 3.0
    for bus, i in current_draws.items():
        if bus != source_bus:
            i_draw[index[bus] - 1] -= i   # drawn current enters KCL with minus sign

    v, it, mism = _newton(
        y, np.array([e_pos]), s_draw, i_draw, np.zeros(n, complex), opts,
        v0=np.asarray(v0, complex) if v0 is not None else None,
    )
    v_all = np.concatenate([[e_pos], v])

    volts = {bus: Phasor3.from_array(v_all[index[bus]] * _POS_UNITS) for bus in buses}
    currents = {}
    for (f, t), zp in z_pos.items():
        ipos = (v_all[index[f]] - v_all[index[t]]) / zp
        currents[(f, t)] = Phasor3.from_array(ipos * _POS_UNITS)
    total_s = sum(power_draws.values())
    return SolveResult(
        node_voltages=volts,
        branch_currents=currents,
        load_currents={},
        converged=True,
        iterations=it,
        mismatch=mism,
        total_load_s=complex(total_s),
    )


# ----------------------------------------------------------------------
# co-simulation exchange and monolithic counterpart


def _shunts_by_feeder(model: NetworkModel):
    """Split shunts into transmission-bus shunts and per-feeder-node shunts."""
    tn_buses = set(model.transmission_buses)
    tn, per_feeder = {}, {}
    for sh in model.shunts:
        if sh.node in tn_buses:
            tn[sh.node] = tn.get(sh.node, 0j) + sum(sh.s_inject)
        else:
            sub, f = model.feeder_of_node(sh.node)
            per_feeder.setdefault(f.name, []).append(sh)
    return tn, per_feeder


def cosim_solve(
    model: NetworkModel,
    lam: float = 1.0,
    opts: SolverOptions = DEFAULT_OPTIONS,
    warm: dict[str, complex] | None = None,
) -> SolveResult:
    """Alternating transmission/feeder solve per the exchange protocol.

    Feeders are solved at the current substation voltage; their aggregate
    (multiplicity-weighted) head power goes to the transmission side as a
    constant-PQ draw; the transmission solve returns updated substation
    voltages. Stops when no substation voltage moves more than
    ``opts.exchange_tol`` between rounds.
    """
    tn_shunts, feeder_shunts = _shunts_by_feeder(model)
    e_pos = model.source_voltage.positive_sequence()
    v_sub: dict[str, complex] = dict(warm) if warm else {
        s: e_pos for s in model.substations
    }
    if not model.substations or not any(model.feeders.values()):
        res = solve_transmission(
            model.transmission_branches,
            model.source_bus,
            model.source_voltage,
            power_draws={b: -s for b, s in tn_shunts.items()},
            opts=opts,
        )
        return res

    feeder_results: dict[str, SolveResult] = {}
    rounds = 0
    tn_res = None
    for rounds in range(1, opts.max_rounds + 1):
        draws: dict[str, complex] = {b: -s for b, s in tn_shunts.items()}
        for sub in model.substations:
            head_v = Phasor3.from_array(v_sub[sub] * _POS_UNITS)
            agg = 0j
            for f in model.feeders.get(sub, ()):
                fres = solve_feeder(
                    f, head_v, lam, shunts=feeder_shunts.get(f.name, ()), opts=opts
                )
                feeder_results[f.name] = fres
                i_head = feeder_head_current(f, fres)
                s_head = complex(np.sum(head_v.as_array() * np.conj(i_head.as_array())))
                agg += f.multiplicity * s_head
            draws[sub] = draws.get(sub, 0j) + agg
        tn_buses = _tn_structure(model.transmission_branches, model.source_bus)[0]
        tn_res = solve_transmission(
            model.transmission_branches,
            model.source_bus,
            model.source_voltage,
            power_draws=draws,
            opts=opts,
            v0=[v_sub.get(b, e_pos) for b in tn_buses[1:]] if len(tn_buses) > 1 else None,
        )
        delta = 0.0
        new_v = {}
        for sub in model.substations:
            vp = tn_res.node_voltages[sub].a
            delta = max(delta, abs(vp - v_sub[sub]))
            new_v[sub] = vp
        v_sub = new_v
        if delta <= opts.exchange_tol:
            break
    else:
        raise NotConverged(
            f"exchange did not settle after {opts.max_rounds} rounds", lam=lam
        )

    # final feeder pass at the settled substation voltages for a consistent snapshot
    volts = dict(tn_res.node_voltages)
    currents = dict(tn_res.branch_currents)
    load_currents: dict[str, Phasor3] = {}
    total_s = 0j
    mism = tn_res.mismatch
    for sub in model.substations:
        head_v = Phasor3.from_array(v_sub[sub] * _POS_UNITS)
        for f in model.feeders.get(sub, ()):
            fres = solve_feeder(
                f, head_v, lam, shunts=feeder_shunts.get(f.name, ()), opts=opts
            )
            mism = max(mism, fres.mismatch)
            for node, v in fres.node_voltages.items():
                if node != sub:
                    volts[node] = v
            currents.update(fres.branch_currents)
            load_currents.update(fres.load_currents)
            total_s += f.multiplicity * fres.total_load_s
    return SolveResult(
        node_voltages=volts,
        branch_currents=currents,
        load_currents=load_currents,
        converged=True,
        iterations=rounds,
        mismatch=mism,
        total_load_s=total_s,
    )


def monolithic_solve(
    model: NetworkModel,
    lam: float = 1.0,
    opts: SolverOptions = DEFAULT_OPTIONS,
    warm: np.ndarray | None = None,
) -> SolveResult:
    """Simultaneous Newton over all transmission and feeder unknowns.

    Same composite model as ``cosim_solve`` (positive-sequence transmission,
    three-phase feeders, power-conserving interface), solved in one system
    with a finite-difference Jacobian. Kept algorithmically independent of the
    exchange loop so the two can cross-validate each other.
    """
    tn_shunts, feeder_shunts = _shunts_by_feeder(model)
    buses, tindex, y_tn, z_pos = _tn_structure(
        model.transmission_branches, model.source_bus
    )
    e_pos = model.source_voltage.positive_sequence()
    n_tn = len(buses) - 1

    fstructs = []  # (sub, feeder, nodes, index, yb, s_draw(.), y_load(.))
    n_f = 0
    for sub in model.substations:
        for f in model.feeders.get(sub, ()):
            nodes, index, yb = _feeder_structure(f, sub)
            s_map, y_map = _feeder_loads(f, lam, feeder_shunts.get(f.name, ()))
            fstructs.append((sub, f, nodes, index, yb, s_map, y_map))
            n_f += len(nodes) - 1

    n_unk = n_tn + 3 * n_f
    if n_unk == 0:
        return cosim_solve(model, lam, opts)

    def unpack(x):
        v_tn = x[:n_tn]
        v_f = []
        off = n_tn
        for (_, f, nodes, *_rest) in fstructs:
            k = 3 * (len(nodes) - 1)
            v_f.append(x[off : off + k])
            off += k
        return v_tn, v_f

    def residual(x):
        v_tn, v_f = unpack(x)
        v_all_tn = np.concatenate([[e_pos], v_tn])
        r_tn = (y_tn @ v_all_tn)[1:]
        for bus, s in tn_shunts.items():
            if bus != model.source_bus:
                r_tn[tindex[bus] - 1] += np.conj((-s / 3.0) / v_tn[tindex[bus] - 1])
        r_out = [r_tn]
        for fi, (sub, f, nodes, index, yb, s_map, y_map) in enumerate(fstructs):
            v_head = v_all_tn[tindex[sub]] * _POS_UNITS
            vv = {nodes[0]: v_head}
            x_f = v_f[fi]
            for node in nodes[1:]:
                k = index[node] - 1
                vv[node] = x_f[3 * k : 3 * k + 3]
            r_f = np.zeros(3 * (len(nodes) - 1), complex)
            i_head = np.zeros(3, complex)
            for br in f.branches:
                blk = yb[(br.from_node, br.to_node)]
                iflow = blk @ (vv[br.from_node] - vv[br.to_node])
                if br.from_node == nodes[0]:
                    i_head += iflow
                else:
                    k = index[br.from_node] - 1
                    r_f[3 * k : 3 * k + 3] += iflow
                k = index[br.to_node] - 1
                r_f[3 * k : 3 * k + 3] -= iflow
            for node, s in s_map.items():
                if node == nodes[0]:
                    continue
                k = index[node] - 1
                vn = vv[node]
                r_f[3 * k : 3 * k + 3] += np.where(s != 0, np.conj(s / vn), 0.0)
            for node, yl in y_map.items():
                if node == nodes[0]:
                    continue
                k = index[node] - 1
                r_f[3 * k : 3 * k + 3] += yl * vv[node]
            # power-conserving interface: feeder head power appears as a draw
            # on its substation's positive-sequence bus (slack absorbs it freely)
            if tindex[sub] > 0:
                s_head = complex(np.sum(v_head * np.conj(i_head)))
                vp = v_all_tn[tindex[sub]]
                r_tn[tindex[sub] - 1] += np.conj(f.multiplicity * s_head / (3.0 * vp))
            r_out.append(r_f)
        return np.concatenate(r_out)

    if warm is not None and len(warm) == n_unk:
        x = np.array(warm, complex)
    else:
        x = np.empty(n_unk, complex)
        x[:n_tn] = e_pos
        off = n_tn
        for (sub, f, nodes, *_r) in fstructs:
            k = len(nodes) - 1
            x[off : off + 3 * k] = np.tile(e_pos * _POS_UNITS, k)
            off += 3 * k

    def realify(z):
        return np.concatenate([z.real, z.imag])

    def to_complex(xr):
        half = len(xr) // 2
        return xr[:half] + 1j * xr[half:]

    xr = realify(x)
    it = 0
    for it in range(opts.max_iter):
        r = residual(to_complex(xr))
        xc = to_complex(xr)
        mism = float(np.max(np.abs(xc * np.conj(r))))
        if not np.isfinite(mism):
            raise NotConverged("monolithic solver produced non-finite iterate")
        if mism < opts.tol:
            break
        rr = realify(r)
        jac = np.empty((len(rr), len(xr)))
        h = 1e-7
        for k in range(len(xr)):
            xp = xr.copy()
            xp[k] += h
            jac[:, k] = (realify(residual(to_complex(xp))) - rr) / h
        try:
            dx = np.linalg.solve(jac, -rr)
        except np.linalg.LinAlgError as exc:
            raise NotConverged(f"singular monolithic Jacobian: {exc}") from exc
        base = float(np.linalg.norm(rr))
        step = 1.0
        for _ in range(12):
            cand = xr + step * dx
            rc = residual(to_complex(cand))
            if float(np.linalg.norm(realify(rc))) < base:
                break
            step *= 0.5
        else:
            raise NotConverged("monolithic line search stalled")
        xr = xr + step * dx
    else:
        raise NotConverged(f"monolithic solve: no convergence after {opts.max_iter} iterations")

    xc = to_complex(xr)
    if float(np.min(np.abs(xc))) < opts.v_min:
        raise NotConverged("monolithic solve converged onto collapsed branch")

    v_tn, v_f = unpack(xc)
    v_all_tn = np.concatenate([[e_pos], v_tn])
    volts = {bus: Phasor3.from_array(v_all_tn[tindex[bus]] * _POS_UNITS) for bus in buses}
    currents = {}
    for (f_, t_), zp in z_pos.items():
        ipos = (v_all_tn[tindex[f_]] - v_all_tn[tindex[t_]]) / zp
        currents[(f_, t_)] = Phasor3.from_array(ipos * _POS_UNITS)
    load_currents = {}
    total_s = 0j
    mism_final = float(np.max(np.abs(xc * np.conj(residual(xc)))))
    for fi, (sub, f, nodes, index, yb, s_map, y_map) in enumerate(fstructs):
        v_head = v_all_tn[tindex[sub]] * _POS_UNITS
        vv = {nodes[0]: v_head}
        for node in nodes[1:]:
            k = index[node] - 1
            vv[node] = v_f[fi][3 * k : 3 * k + 3]
            volts[node] = Phasor3.from_array(vv[node])
        for br in f.branches:
            blk = yb[(br.from_node, br.to_node)]
            currents[(br.from_node, br.to_node)] = Phasor3.from_array(
                blk @ (vv[br.from_node] - vv[br.to_node])
            )
        for node, spec in f.loads.items():
            vn = vv[node]
            s = lam * np.array(spec.s_nominal, complex)
            if spec.model == "constant_power":
                i_ld = np.where(s != 0, np.conj(s / vn), 0.0)
            else:
                i_ld = np.conj(s) * vn
            load_currents[node] = Phasor3.from_array(i_ld)
            total_s += f.multiplicity * complex(np.sum(vn * np.conj(i_ld)))
    return SolveResult(
        node_voltages=volts,
        branch_currents=currents,
        load_currents=load_currents,
        converged=True,
        iterations=it,
        mismatch=mism_final,
        total_load_s=total_s,
    )


# ----------------------------------------------------------------------
# continuation loading


def _monolithic_warm(model: NetworkModel, res: SolveResult) -> np.ndarray:
    """Rebuild the monolithic unknown vector from a previous solution."""
    buses = _tn_structure(model.transmission_branches, model.source_bus)[0]
    parts = [np.array([res.node_voltages[b].a for b in buses[1:]], complex)]
    for sub in model.substations:
        for f in model.feeders.get(sub, ()):
            for node in f.nodes(sub)[1:]:
                parts.append(res.node_voltages[node].as_array())
    return np.concatenate(parts) if parts else np.zeros(0, complex)


def _model_is_linear(model: NetworkModel) -> bool:
    for fdrs in model.feeders.values():
        for f in fdrs:
            for spec in f.loads.values():
                if spec.model == "constant_power":
                    return False
    return True


def find_lambda_max(
    model: NetworkModel,
    step0: float = 0.05,
    min_step: float = 1e-4,
    solver: str = "cosim",
    opts: SolverOptions = DEFAULT_OPTIONS,
    start_lam: float = 1.0,
) -> NoseResult:
    """Bracket the loadability limit by scaling all loads with one factor.

    Models containing constant-power loads stop at solver divergence (the
    nose). Purely constant-impedance models never diverge, so the search
    brackets the peak of total delivered active power instead; for those the
    walk may also descend below the starting point when the base point already
    sits past the peak.
    """
    solve = monolithic_solve if solver == "monolithic" else cosim_solve
    mode = "peak" if _model_is_linear(model) else "divergence"

    warm = None

    def probe(lam):
        nonlocal warm
        res = solve(model, lam, opts=opts, warm=warm)
        return res

    try:
        base = probe(start_lam)
    except NotConverged as exc:
        raise BaseCaseDiverged(
            f"model does not solve at lambda = {start_lam}: {exc}"
        ) from exc

    accepted: dict[float, SolveResult] = {start_lam: base}
    lam_good = start_lam
    best_p = base.total_load_s.real

    def warm_from(res: SolveResult, lam):
        # reuse the previous solution as the next initial guess
        if solver == "cosim":
            return {s: res.node_voltages[s].a for s in model.substations}
        return _monolithic_warm(model, res)

    warm = warm_from(base, start_lam)

    step = step0
    direction = +1.0
    upper = None
    if mode == "peak":
        # decide walk direction from the first probe
        try:
            trial = probe(start_lam + step)
            if trial.total_load_s.real > best_p:
                accepted[start_lam + step] = trial
                lam_good, best_p = start_lam + step, trial.total_load_s.real
                warm = warm_from(trial, lam_good)
            else:
                direction = -1.0
                upper = start_lam + step
        except NotConverged:
            direction = -1.0
            upper = start_lam + step

    while step >= min_step:
        lam_try = lam_good + direction * step
        if lam_try <= 0:
            step /= 2
            continue
        try:
            res = probe(lam_try)
        except NotConverged:
            if mode == "divergence":
                upper = lam_try if upper is None else min(upper, lam_try)
            step /= 2
            continue
        p = res.total_load_s.real
        if mode == "peak" and p <= best_p:
            if direction > 0:
                upper = lam_try if upper is None else min(upper, lam_try)
            step /= 2
            continue
        accepted[lam_try] = res
        lam_good = lam_try
        best_p = max(best_p, p)
        warm = warm_from(res, lam_good)

    trajectory = sorted(accepted.items())
    return NoseResult(
        lambda_max=lam_good,
        trajectory=[(lam, res) for lam, res in trajectory],
        mode=mode,
        final_step=step,
        upper_bound=upper,
    )


# ----------------------------------------------------------------------
# what-if interventions


def apply_var_support(model: NetworkModel, bus: str, q_total: float) -> NetworkModel:
    """Add a fixed reactive injection (three-phase total, pu) at a bus."""
    if not model.has_node(bus):
        raise UnknownBus(f"var support target {bus!r} not in model")
    from .network import Shunt

    sh = Shunt(bus, (1j * q_total / 3, 1j * q_total / 3, 1j * q_total / 3))
    return validate_network(replace(model, shunts=model.shunts + (sh,)))


def add_line(model: NetworkModel, from_bus: str, to_bus: str, z: ImpedanceMatrix3) -> NetworkModel:
    """Add a (balanced) transmission branch between two existing buses."""
    tn = model.transmission_buses
    for b in (from_bus, to_bus):
        if b not in tn:
            raise UnknownBus(f"line endpoint {b!r} is not a transmission bus")
    br = Branch(from_bus, to_bus, z)
    return validate_network(
        replace(model, transmission_branches=model.transmission_branches + (br,))
    )


# ----------------------------------------------------------------------
# diagnostics


def power_balance(model: NetworkModel, result: SolveResult, lam: float = 1.0) -> dict:
    """Source power vs loads + losses + shunt injections for a converged solve."""
    tn_buses = set(model.transmission_buses)
    s_source = 0j
    for br in model.transmission_branches:
        if br.from_node == model.source_bus:
            cur = result.branch_currents[(br.from_node, br.to_node)]
            s_source += complex(
                np.sum(model.source_voltage.as_array() * np.conj(cur.as_array()))
            )
    # feeders rooted directly at the source bus feed from it without a
    # transmission branch; count their (multiplicity-weighted) head power
    for f in model.feeders.get(model.source_bus, ()):
        for br in f.branches:
            if br.from_node == model.source_bus:
                cur = result.branch_currents[(br.from_node, br.to_node)]
                s_source += f.multiplicity * complex(
                    np.sum(model.source_voltage.as_array() * np.conj(cur.as_array()))
                )
    losses = 0j
    for br in model.transmission_branches:
        i = result.branch_currents[(br.from_node, br.to_node)].as_array()
        losses += complex(np.conj(i) @ br.z.as_array() @ i)
    for sub in model.substations:
        for fdr in model.feeders.get(sub, ()):
            for br in fdr.branches:
                i = result.branch_currents[(br.from_node, br.to_node)].as_array()
                losses += fdr.multiplicity * complex(np.conj(i) @ br.z.as_array() @ i)
    s_shunt = sum((sum(sh.s_inject) for sh in model.shunts), 0j)
    return {
        "source": s_source,
        "loads": result.total_load_s,
        "losses": losses,
        "shunt_injection": s_shunt,
        "residual": s_source + s_shunt - result.total_load_s - losses,
    }


def export_trajectory_csv(nose: NoseResult, path):
    """Plot-ready curve: lambda, total delivered P, minimum voltage magnitude."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "total_p", "min_v"])
        for lam, res in nose.trajectory:
            w.writerow([f"{lam:.17g}", f"{res.total_load_s.real:.17g}", f"{res.min_voltage():.17g}"])
