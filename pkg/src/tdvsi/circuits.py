"""Builders for the bundled study circuits.

These construct the desk-scale networks used throughout the tests and demos:
single-load Thevenin chains (balanced and unbalanced variants) and a small
two-substation system with radial feeders.
"""

from __future__ import annotations

from .network import Branch, Feeder, LoadSpec, NetworkModel, Shunt, validate_network
from .phasors import BalancedSpec, Phasor3, balanced_matrix, balanced_current

BALANCED_SOURCE = balanced_current(1.0)  # 1 pu positive-sequence set


def chain_network(
    z_t: BalancedSpec,
    z_d: BalancedSpec,
    load_s: tuple[complex, complex, complex],
    load_model: str = "constant_power",
    source_voltage: Phasor3 = BALANCED_SOURCE,
) -> NetworkModel:
    """Source -- Z_T -- substation -- Z_D -- single star load.

    The transmission/distribution split is explicit: the Z_T branch is the
    transmission line to the substation bus, the Z_D branch is the feeder.
    Only valid with balanced loads (the transmission side solves in positive
    sequence); use :func:`unbalanced_chain` otherwise.
    """
    model = NetworkModel(
        source_bus="src",
        source_voltage=source_voltage,
        transmission_branches=(Branch("src", "sub", balanced_matrix(z_t)),),
        substations=("sub",),
        feeders={
            "sub": (
                Feeder(
                    name="chain",
                    branches=(Branch("sub", "load", balanced_matrix(z_d)),),
                    loads={"load": LoadSpec(model=load_model, s_nominal=load_s)},
                ),
            )
        },
    )
    return validate_network(model)


def unbalanced_chain(
    z_t: BalancedSpec,
    z_d: BalancedSpec,
    load_s: tuple[complex, complex, complex],
    load_model: str = "constant_impedance",
    source_voltage: Phasor3 = BALANCED_SOURCE,
) -> NetworkModel:
    """Same chain, but both branches live in one feeder rooted at the source.

    Unbalanced load current then flows through the full 3x3 matrices of both
    branches, which the positive-sequence transmission solve cannot represent.
    The junction node stands in for the substation measurement point.
    """
    model = NetworkModel(
        source_bus="src",
        source_voltage=source_voltage,
        transmission_branches=(),
        substations=("src",),
        feeders={
            "src": (
                Feeder(
                    name="chain3ph",
                    branches=(
                        Branch("src", "junction", balanced_matrix(z_t)),
                        Branch("junction", "load", balanced_matrix(z_d)),
                    ),
                    loads={"load": LoadSpec(model=load_model, s_nominal=load_s)},
                ),
            )
        },
    )
    return validate_network(model)


def reactive_chain_family() -> dict[str, NetworkModel]:
    """Three chains with fixed transmission reactance and growing feeder impedance.

    Unity-power-factor constant-power load, 1 pu per phase at the base point,
    so the load scaling factor reads directly as per-phase delivered power.
    """
    z_t = BalancedSpec(0.08j, 0.0)
    variants = {
        "chain_a": BalancedSpec(0.01 * (0 + 2j), 0.0),
        "chain_b": BalancedSpec(0.01 * (1 + 2j), 0.0),
        "chain_c": BalancedSpec(0.01 * (2 + 2j), 0.0),
    }
    load = (1.0 + 0j, 1.0 + 0j, 1.0 + 0j)
    return {
        name: chain_network(z_t, z_d, load, load_model="constant_power")
        for name, z_d in variants.items()
    }


# per-phase loads for the two unbalanced validation scenarios; the file base
# point is a quarter of these ratings so the nose sits well above lambda = 1
UNBALANCED_LOADS = {
    "lagging": (1.5 + 0.6j, 0.5 + 0.2j, 1.0 + 0.4j),
    "leading_a": (1.5 - 0.6j, 0.5 + 0.2j, 1.0 + 0.4j),
}
UNBALANCED_BASE_FRACTION = 0.25


def unbalanced_chain_scenarios() -> dict[str, NetworkModel]:
    z_t = BalancedSpec(0.8 + 1.6j, 0.25 + 0.9j)
    z_d = BalancedSpec(0.2 + 0.4j, 0.05 + 0.1j)
    out = {}
    for name, s in UNBALANCED_LOADS.items():
        base = tuple(v * UNBALANCED_BASE_FRACTION for v in s)
        out[f"unbalanced_chain_{name}"] = unbalanced_chain(
            z_t, z_d, base, load_model="constant_impedance"
        )
    return out


def two_substation_system(
    feeder_scale_1: float = 1.0,
    feeder_scale_2: float = 1.0,
) -> NetworkModel:
    """Source feeding two substations, each with one three-node radial feeder.

    Substation t1 hangs on the weaker transmission line, so with equal feeder
    scales the system is transmission-limited at t1's feeder. Scaling a
    feeder's impedances up (e.g. 2.8x on t2) moves the binding constraint into
    that distribution network.
    """
    def feeder(sub: str, tag: str, scale: float) -> Feeder:
        z1 = balanced_matrix(BalancedSpec(scale * (0.010 + 0.030j), scale * (0.002 + 0.008j)))
        z2 = balanced_matrix(BalancedSpec(scale * (0.012 + 0.036j), scale * (0.002 + 0.008j)))
        loads = {
            f"{tag}_mid": LoadSpec(
                model="constant_power",
                s_nominal=(0.24 + 0.10j, 0.18 + 0.07j, 0.21 + 0.08j),
            ),
            f"{tag}_end": LoadSpec(
                model="constant_power",
                s_nominal=(0.40 + 0.16j, 0.30 + 0.12j, 0.36 + 0.14j),
            ),
        }
        return Feeder(
            name=f"feeder_{tag}",
            branches=(
                Branch(sub, f"{tag}_mid", z1),
                Branch(f"{tag}_mid", f"{tag}_end", z2),
            ),
            loads=loads,
        )

    model = NetworkModel(
        source_bus="src",
        source_voltage=BALANCED_SOURCE,
        transmission_branches=(
            Branch("src", "t1", balanced_matrix(BalancedSpec(0.010 + 0.080j, 0.0))),
            Branch("src", "t2", balanced_matrix(BalancedSpec(0.004 + 0.030j, 0.0))),
        ),
        substations=("t1", "t2"),
        feeders={
            "t1": (feeder("t1", "d1", feeder_scale_1),),
            "t2": (feeder("t2", "d2", feeder_scale_2),),
        },
    )
    return validate_network(model)


def bundled_networks() -> dict[str, NetworkModel]:
    """All circuits shipped as JSON files under networks/."""
    nets = dict(reactive_chain_family())
    nets.update(unbalanced_chain_scenarios())
    nets["twin_feeder_base"] = two_substation_system(1.0, 1.0)
    nets["twin_feeder_heavy"] = two_substation_system(1.0, 2.8)
    return nets
