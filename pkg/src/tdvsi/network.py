"""Ground-truth network model: transmission graph + radial feeders + loads.

Everything is per-unit on one system base. The network file declares base MVA
and kV per region for traceability, but the engine never converts units.

File format (JSON, schema in docs/network.schema.json): complex numbers are
two-element [re, im] arrays, impedance matrices 3x3 nested arrays of those.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonPositiveFactor, ParseError, UnknownBus, ValidationError
from .phasors import ImpedanceMatrix3, Phasor3

LOAD_MODELS = ("constant_power", "constant_impedance")

SYMMETRY_ATOL = 1e-12


@dataclass(frozen=True)
class LoadSpec:
    """Star-connected load; s_nominal is the per-phase complex power drawn at 1 pu."""

    model: str
    s_nominal: tuple[complex, complex, complex]
    connection: str = "star"

    def __post_init__(self):
        if self.model not in LOAD_MODELS:
            raise ValidationError(f"unknown load model {self.model!r}")
        if self.connection != "star":
            raise ValidationError("only star-connected loads are supported")
        object.__setattr__(self, "s_nominal", tuple(complex(s) for s in self.s_nominal))

    def scaled(self, factor: float) -> "LoadSpec":
        return replace(self, s_nominal=tuple(s * factor for s in self.s_nominal))

    @property
    def energized_phases(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.s_nominal) if s != 0)


@dataclass(frozen=True)
class Branch:
    from_node: str
    to_node: str
    z: ImpedanceMatrix3


@dataclass(frozen=True)
class Feeder:
    """Radial distribution feeder rooted at its substation bus.

    `multiplicity` models several identical feeders attached to one
    substation: the aggregate seen by the transmission side is multiplicity
    times the per-feeder head power, without duplicating graph nodes.
    """

    name: str
    branches: tuple[Branch, ...]
    loads: dict[str, LoadSpec] = field(default_factory=dict)
    multiplicity: int = 1

    def nodes(self, root: str) -> list[str]:
        """Feeder nodes in breadth-first order from the substation root."""
        adj: dict[str, list[str]] = {}
        for b in self.branches:
            adj.setdefault(b.from_node, []).append(b.to_node)
            adj.setdefault(b.to_node, []).append(b.from_node)
        order, seen, queue = [], {root}, [root]
        while queue:
            n = queue.pop(0)
            order.append(n)
            for m in adj.get(n, []):
                if m not in seen:
                    seen.add(m)
                    queue.append(m)
        return order


@dataclass(frozen=True)
class Shunt:
    """Fixed per-phase complex power injection (positive injects into the node)."""

    node: str
    s_inject: tuple[complex, complex, complex]


@dataclass(frozen=True)
class NetworkModel:
    source_bus: str
    source_voltage: Phasor3
    transmission_branches: tuple[Branch, ...]
    substations: tuple[str, ...]
    feeders: dict[str, tuple[Feeder, ...]]
    shunts: tuple[Shunt, ...] = ()
    base: dict = field(default_factory=dict)

    # -- derived views -------------------------------------------------

    @property
    def transmission_buses(self) -> list[str]:
        buses = [self.source_bus]
        for b in self.transmission_branches:
            for n in (b.from_node, b.to_node):
                if n not in buses:
                    buses.append(n)
        return buses

    def feeder_of_node(self, node: str) -> tuple[str, Feeder]:
        """(substation, feeder) owning a distribution node."""
        for sub, fdrs in self.feeders.items():
            for f in fdrs:
                for br in f.branches:
                    if node in (br.from_node, br.to_node) and node != sub:
                        return sub, f
        raise UnknownBus(f"node {node!r} is not part of any feeder")

    def load_nodes(self) -> list[str]:
        out = []
        for sub in self.substations:
            for f in self.feeders.get(sub, ()):
                out.extend(n for n in f.loads if n not in out)
        return out

    def has_node(self, node: str) -> bool:
        if node in self.transmission_buses:
            return True
        for sub, fdrs in self.feeders.items():
            for f in fdrs:
                for br in f.branches:
                    if node in (br.from_node, br.to_node):
                        return True
        return False

    def total_base_load(self) -> complex:
        """Sum of per-phase nominal load powers over all feeders x multiplicity."""
        total = 0.0 + 0.0j
        for sub in self.substations:
            for f in self.feeders.get(sub, ()):
                total += f.multiplicity * sum(
                    s for spec in f.loads.values() for s in spec.s_nominal
                )
        return total


# ----------------------------------------------------------------------
# validation


def _check_radial(feeder: Feeder, root: str):
    nodes = set()
    for b in feeder.branches:
        nodes.update((b.from_node, b.to_node))
    if root not in nodes and feeder.branches:
        raise ValidationError(
            f"feeder {feeder.name!r}: no branch touches its substation {root!r}"
        )
    if len(feeder.branches) != len(nodes) - 1:
        raise ValidationError(
            f"feeder {feeder.name!r} is not radial "
            f"({len(feeder.branches)} branches, {len(nodes)} nodes)"
        )
    reached = set(feeder.nodes(root))
    if reached != nodes:
        missing = sorted(nodes - reached)
        raise ValidationError(
            f"feeder {feeder.name!r}: nodes {missing} unreachable from {root!r}"
        )


def validate_network(model: NetworkModel) -> NetworkModel:
    """Check all model invariants; returns the model for chaining."""
    for br in model.transmission_branches + tuple(
        b for fs in model.feeders.values() for f in fs for b in f.branches
    ):
        if not br.z.is_symmetric(SYMMETRY_ATOL):
            raise ValidationError(
                f"branch {br.from_node}-{br.to_node}: impedance matrix not symmetric"
            )
    # transmission side is solved in positive sequence, so its lines must be balanced
    for br in model.transmission_branches:
        if not br.z.is_balanced(1e-9):
            raise ValidationError(
                f"transmission branch {br.from_node}-{br.to_node} must be balanced"
            )
    # transmission connectivity from the source
    adj: dict[str, set[str]] = {}
    for br in model.transmission_branches:
        adj.setdefault(br.from_node, set()).add(br.to_node)
        adj.setdefault(br.to_node, set()).add(br.from_node)
    seen, queue = {model.source_bus}, [model.source_bus]
    while queue:
        n = queue.pop(0)
        for m in adj.get(n, ()):
            if m not in seen:
                seen.add(m)
                queue.append(m)
    for sub in model.substations:
        if sub not in seen:
            raise ValidationError(f"substation {sub!r} not connected to the source")
        for f in model.feeders.get(sub, ()):
            if f.multiplicity < 1:
                raise ValidationError(f"feeder {f.name!r}: multiplicity must be >= 1")
            _check_radial(f, sub)
            feeder_nodes = set(f.nodes(sub))
            for n, spec in f.loads.items():
                if n not in feeder_nodes:
                    raise ValidationError(
                        f"feeder {f.name!r}: load node {n!r} not in feeder"
                    )
                if n == sub:
                    raise ValidationError(
                        f"feeder {f.name!r}: load may not sit on the substation bus {n!r}"
                    )
                if all(s == 0 for s in spec.s_nominal):
                    raise ValidationError(
                        f"feeder {f.name!r}: load at {n!r} has all-zero power"
                    )
    # feeder node ids must not collide across feeders or with transmission buses
    seen_nodes = set(model.transmission_buses)
    for sub in model.substations:
        for f in model.feeders.get(sub, ()):
            for n in f.nodes(sub):
                if n == sub:
                    continue
                if n in seen_nodes:
                    raise ValidationError(f"node id {n!r} used more than once")
                seen_nodes.add(n)
    for sh in model.shunts:
        if not model.has_node(sh.node):
            raise ValidationError(f"shunt references unknown node {sh.node!r}")
    unknown_subs = [s for s in model.feeders if s not in model.substations]
    if unknown_subs:
        raise ValidationError(f"feeders attached to non-substation buses {unknown_subs}")
    return model


# ----------------------------------------------------------------------
# scaling operations


def scale_feeder(feeder: Feeder, factor: float) -> Feeder:
    """Multiply every branch impedance by `factor`; loads unchanged."""
    if not factor > 0:
        raise NonPositiveFactor(f"impedance scale factor must be > 0, got {factor}")
    return replace(
        feeder,
        branches=tuple(
            Branch(b.from_node, b.to_node, b.z * factor) for b in feeder.branches
        ),
    )


def scale_loading(model: NetworkModel, lam: float) -> NetworkModel:
    """Multiply every nominal load power by `lam` (lambda = 1 is the base point).

    Shunt injections model fixed support devices and are deliberately not
    scaled.
    """
    if not lam > 0:
        raise NonPositiveFactor(f"loading factor must be > 0, got {lam}")
    feeders = {
        sub: tuple(
            replace(f, loads={n: spec.scaled(lam) for n, spec in f.loads.items()})
            for f in fdrs
        )
        for sub, fdrs in model.feeders.items()
    }
    return replace(model, feeders=feeders)


# ----------------------------------------------------------------------
# JSON (de)serialization


def _c2j(z: complex) -> list[float]:
    return [z.real, z.imag]


def _j2c(v, what: str) -> complex:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ParseError(f"{what}: expected [re, im], got {v!r}")
    return complex(float(v[0]), float(v[1]))


def _m2j(m: ImpedanceMatrix3) -> list:
    return [[_c2j(m.z[i, j]) for j in range(3)] for i in range(3)]


def _j2m(rows, what: str) -> ImpedanceMatrix3:
    if not (isinstance(rows, list) and len(rows) == 3):
        raise ParseError(f"{what}: expected 3x3 matrix")
    vals = [[_j2c(rows[i][j], what) for j in range(3)] for i in range(3)]
    return ImpedanceMatrix3(vals)


def model_to_dict(model: NetworkModel) -> dict:
    return {
        "base": model.base,
        "source": {
            "bus": model.source_bus,
            "voltage": [_c2j(model.source_voltage.a),
                        _c2j(model.source_voltage.b),
                        _c2j(model.source_voltage.c)],
        },
        "transmission": [
            {"from": b.from_node, "to": b.to_node, "z": _m2j(b.z)}
            for b in model.transmission_branches
        ],
        "substations": list(model.substations),
        "feeders": {
            sub: [
                {
                    "name": f.name,
                    "multiplicity": f.multiplicity,
                    "branches": [
                        {"from": b.from_node, "to": b.to_node, "z": _m2j(b.z)}
                        for b in f.branches
                    ],
                    "loads": {
                        n: {
                            "model": spec.model,
                            "connection": spec.connection,
                            "s": [_c2j(s) for s in spec.s_nominal],
                        }
                        for n, spec in sorted(f.loads.items())
                    },
                }
                for f in fdrs
            ]
            for sub, fdrs in model.feeders.items()
        },
        "shunts": [
            {"node": sh.node, "s": [_c2j(s) for s in sh.s_inject]}
            for sh in model.shunts
        ],
    }


def model_from_dict(data: dict) -> NetworkModel:
    try:
        src = data["source"]
        v = src["voltage"]
        source_voltage = Phasor3(
            _j2c(v[0], "source voltage"),
            _j2c(v[1], "source voltage"),
            _j2c(v[2], "source voltage"),
        )
        transmission = tuple(
            Branch(b["from"], b["to"], _j2m(b["z"], f"transmission {b['from']}-{b['to']}"))
            for b in data.get("transmission", [])
        )
        feeders = {}
        for sub, fdrs in data.get("feeders", {}).items():
            feeders[sub] = tuple(
                Feeder(
                    name=f.get("name", f"{sub}_f{i}"),
                    multiplicity=int(f.get("multiplicity", 1)),
                    branches=tuple(
                        Branch(b["from"], b["to"], _j2m(b["z"], f"feeder branch {b['from']}-{b['to']}"))
                        for b in f["branches"]
                    ),
                    loads={
                        n: LoadSpec(
                            model=ld["model"],
                            connection=ld.get("connection", "star"),
                            s_nominal=tuple(_j2c(s, f"load at {n}") for s in ld["s"]),
                        )
                        for n, ld in f.get("loads", {}).items()
                    },
                )
                for i, f in enumerate(fdrs)
            )
        shunts = tuple(
            Shunt(
                sh["node"],
                tuple(_j2c(s, f"shunt at {sh['node']}") for s in sh["s"]),
            )
            for sh in data.get("shunts", [])
        )
        model = NetworkModel(
            source_bus=src["bus"],
            source_voltage=source_voltage,
            transmission_branches=transmission,
            substations=tuple(data.get("substations", [])),
            feeders=feeders,
            shunts=shunts,
            base=data.get("base", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed network file: {exc}") from exc
    return validate_network(model)


def load_network(path, validate_schema: bool = False) -> NetworkModel:
    """Load and validate a network JSON file.

    With `validate_schema=True` the file is additionally checked against the
    formal JSON schema shipped in docs/ (the CLI always does this).
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if validate_schema:
        check_schema(data)
    return model_from_dict(data)


def save_network(model: NetworkModel, path):
    """Write the canonical form: sorted keys, shortest round-trip floats."""
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_schema(data: dict):
    import jsonschema

    from pathlib import Path

    schema_path = Path(__file__).resolve().parent / "network.schema.json"
    with open(schema_path) as fh:
        schema = json.load(fh)
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        raise ParseError(f"network file violates schema: {exc.message}") from exc
