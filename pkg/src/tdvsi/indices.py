"""Voltage-stability index, limit-location index, and report assembly.

The node-level index is the ratio of apparent power lost in the combined
upstream equivalents to the apparent power delivered to the load; it reaches
one when the load impedance magnitude matches the source-side impedance, i.e.
at maximum loadability. The transmission/distribution distinguishing index
(TDDI) is the log-ratio of upstream-side to feeder-side loss magnitude at the
critical node: positive means the transmission grid sets the limit, negative
means the feeder does.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, UnknownBus, ZeroLoadImpedance, ZeroLoadPower
from .estimator import TheveninEquivalent
from .measurement import MeasurementFrame
from .phasors import ImpedanceMatrix3, Phasor3, quadratic_form

BOUNDARY_BAND = 0.05  # |tddi| below this reads as "boundary" between T and D limited


def vsi_1ph(z_eq: complex, z_load: complex) -> float:
    """|Z_eq| / |Z_load|: 0 at no load, 1 at the maximum-transfer point."""
    if abs(z_load) == 0:
        raise ZeroLoadImpedance("load impedance magnitude is zero")
    return abs(z_eq) / abs(z_load)


def vsi_t_crit_closed_form(x_t: float, x_d: float) -> float:
    """Substation-side index at critical loading for a purely reactive chain
    with unity-power-factor load: 1 / |1 + (1+j) x_d / x_t|.

    Always below one for x_d > 0, which is why a substation-only view
    understates the stress of the combined system.
    """
    if x_t <= 0:
        raise ValueError("transmission reactance must be positive")
    if x_d < 0:
        raise ValueError("distribution reactance must be nonnegative")
    return 1.0 / abs(1.0 + (1.0 + 1.0j) * (x_d / x_t))


def losses_3ph(
    i_l: Phasor3,
    z_eq_t: ImpedanceMatrix3,
    z_eq_d: ImpedanceMatrix3,
    v_d: Phasor3 | None = None,
    z_load=None,
):
    """(upstream loss, feeder loss, load apparent power) for one load current.

    Losses are the conjugate quadratic forms I* Z I. The load power comes from
    the measured node voltage when available, otherwise from the per-phase
    load impedances (absent phases contribute nothing); the two agree exactly
    whenever the load impedance is defined.
    """
    s_loss_t = quadratic_form(i_l, z_eq_t, i_l)
    s_loss_d = quadratic_form(i_l, z_eq_d, i_l)
    if v_d is not None:
        v = v_d.as_array()
    elif z_load is not None:
        v = np.array(
            [0j if z is None else z * i for z, i in zip(z_load, i_l.as_array())]
        )
    else:
        raise ValueError("provide either v_d or z_load")
    s_load = complex(np.sum(v * np.conj(i_l.as_array())))
    return s_loss_t, s_loss_d, s_load


def vsi_3ph(s_loss_t: complex, s_loss_d: complex, s_load: complex) -> float:
    """|total loss| / |load power|; the three-phase stability index."""
    if abs(s_load) == 0:
        raise ZeroLoadPower("load apparent power magnitude is zero")
    return abs(s_loss_t + s_loss_d) / abs(s_load)


def tddi(s_loss_t: complex, s_loss_d: complex) -> float:
    """log10 of |upstream loss| / |feeder loss|.

    Zero-magnitude losses produce infinite sentinels rather than an error:
    +inf when the feeder side is lossless, -inf when the upstream side is,
    nan when both are.
    """
    lt, ld = abs(s_loss_t), abs(s_loss_d)
    if lt == 0 and ld == 0:
        return math.nan
    if ld == 0:
        return math.inf
    if lt == 0:
        return -math.inf
    return math.log10(lt / ld)


@dataclass
class NodeIndices:
    vsi_3ph: float
    tddi: float
    s_loss_t: complex
    s_loss_d: complex
    s_load: complex


@dataclass
class StabilityReport:
    nodes: dict[str, NodeIndices]
    critical_node: str
    limiting: str                       # "T_limited" | "D_limited" | "boundary"
    vsi_t: dict[str, float] = field(default_factory=dict)
    boundary_band: float = BOUNDARY_BAND

    def to_dict(self) -> dict:
        return {
            "critical_node": self.critical_node,
            "limiting": self.limiting,
            "boundary_band": self.boundary_band,
            "vsi_t": dict(self.vsi_t),
            "nodes": {
                n: {
                    "vsi_3ph": ix.vsi_3ph,
                    "tddi": ix.tddi,
                    "s_loss_t": [ix.s_loss_t.real, ix.s_loss_t.imag],
                    "s_loss_d": [ix.s_loss_d.real, ix.s_loss_d.imag],
                    "s_load": [ix.s_load.real, ix.s_load.imag],
                }
                for n, ix in self.nodes.items()
            },
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "vsi_3ph", "tddi", "class"])
            for n, ix in self.nodes.items():
                cls = "critical" if n == self.critical_node else ""
                w.writerow([n, f"{ix.vsi_3ph:.17g}", f"{ix.tddi:.17g}", cls])


def classify_limiting(tddi_value: float, band: float = BOUNDARY_BAND) -> str:
    if math.isnan(tddi_value) or abs(tddi_value) < band:
        return "boundary"
    return "T_limited" if tddi_value > 0 else "D_limited"


def build_report(
    equivalents,
    latest_frame: MeasurementFrame,
    vsi_t: dict[str, float] | None = None,
    boundary_band: float = BOUNDARY_BAND,
) -> StabilityReport:
    """Node indices from the newest frame's currents and the given equivalents.

    The critical node is the one with the highest stability index; the
    limiting side is read off the sign of its TDDI, with a small band around
    zero classified as "boundary".
    """
    equivalents = list(equivalents)
    if not equivalents:
        raise EmptyInput("no equivalents to report on")
    nodes: dict[str, NodeIndices] = {}
    for eq in equivalents:
        if eq.node not in latest_frame.channels:
            raise UnknownBus(f"frame has no channel for node {eq.node!r}")
        ch = latest_frame.channels[eq.node]
        s_t, s_d, s_load = losses_3ph(ch.i_l, eq.z_eq_t, eq.z_eq_d, v_d=ch.v_d)
        nodes[eq.node] = NodeIndices(
            vsi_3ph=vsi_3ph(s_t, s_d, s_load),
            tddi=tddi(s_t, s_d),
            s_loss_t=s_t,
            s_loss_d=s_d,
            s_load=s_load,
        )
    critical = max(nodes, key=lambda n: nodes[n].vsi_3ph)
    return StabilityReport(
        nodes=nodes,
        critical_node=critical,
        limiting=classify_limiting(nodes[critical].tddi, boundary_band),
        vsi_t=dict(vsi_t or {}),
        boundary_band=boundary_band,
    )
